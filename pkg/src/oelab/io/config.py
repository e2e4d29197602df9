"""Run configuration files.

A run config is flat JSON whose keys mirror PretrainConfig; a seed is
mandatory so no run is accidentally unreproducible. Unknown keys, wrong
types, and out-of-range values are all reported together, one message per
field, so a bad file can be fixed in one pass. Keys starting with an
underscore are comments and are ignored.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid run config:\n" + "\n".join(f"  - {p}" for p in problems))


def load_run_config(path: str | Path):
    from oelab.training.pretrain import PretrainConfig

    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError([f"file not found: {path}"]) from None
    except json.JSONDecodeError as e:
        raise ConfigError([f"not valid JSON: {e}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a JSON object"])

    fields = {f.name: f for f in dataclasses.fields(PretrainConfig)}
    problems = []
    clean = {}
    for key, value in raw.items():
        if key.startswith("_"):
            continue
        if key not in fields:
            problems.append(f"{key}: unknown field (valid: {', '.join(sorted(fields))})")
            continue
        expected = fields[key].type
        ok = {
            "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
            "float": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
            "str": lambda v: isinstance(v, str),
            "bool": lambda v: isinstance(v, bool),
        }.get(expected)
        if ok is None:
            problems.append(f"{key}: unsupported field type {expected}")
        elif not ok(value):
            problems.append(f"{key}: expected {expected}, got {type(value).__name__}")
        else:
            clean[key] = float(value) if expected == "float" else value
    if "seed" not in clean:
        problems.append("seed: required field (runs must pin their seed explicitly)")
    if problems:
        raise ConfigError(problems)
    cfg = PretrainConfig(**clean)
    problems = cfg.validate()
    if problems:
        raise ConfigError(problems)
    return cfg
