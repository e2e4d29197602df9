from oelab.training.schedule import ScheduleConfig, lr_at
from oelab.training.optim import AdamW, OptimConfig, default_no_decay
from oelab.training.groups import (
    FinetunePlan,
    frozenstart_plan,
    llrd_multipliers,
    llrd_plan,
    uniform_plan,
)
from oelab.training.pretrain import (
    PretrainConfig,
    PretrainResult,
    TrainingDiverged,
    model_from_checkpoint,
    pretrain,
)
from oelab.training.finetune import FinetuneConfig, FinetuneResult, finetune

__all__ = [
    "ScheduleConfig",
    "lr_at",
    "AdamW",
    "OptimConfig",
    "default_no_decay",
    "FinetunePlan",
    "llrd_multipliers",
    "llrd_plan",
    "frozenstart_plan",
    "uniform_plan",
    "PretrainConfig",
    "PretrainResult",
    "TrainingDiverged",
    "model_from_checkpoint",
    "pretrain",
    "FinetuneConfig",
    "FinetuneResult",
    "finetune",
]
