from oelab.io.checkpoint import load_checkpoint, save_checkpoint
from oelab.io.config import ConfigError, load_run_config

__all__ = ["save_checkpoint", "load_checkpoint", "ConfigError", "load_run_config"]
