"""Learning-rate schedule: linear warmup into a cosine anneal."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ScheduleConfig:
    peak_lr: float
    warmup_steps: int
    total_steps: int
    final_frac: float = 0.0  # floor, as a fraction of peak

    def __post_init__(self):
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError("need 0 <= warmup_steps < total_steps")
        if not 0.0 <= self.final_frac <= 1.0:
            raise ValueError("final_frac must be in [0, 1]")


def lr_at(step: int, cfg: ScheduleConfig) -> float:
    """Learning rate for an integer step.

    Warmup ramps linearly so that step 0 is peak/warmup and step
    warmup_steps - 1 reaches peak. The cosine phase maps progress p in
    [0, 1] to peak * (final + (1 - final) * (1 + cos(pi p)) / 2); steps
    beyond total hold the floor.
    """
    if step < 0:
        raise ValueError("step must be non-negative")
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.peak_lr * (step + 1) / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    progress = min((step - cfg.warmup_steps) / span, 1.0)
    cos_term = 0.5 * (1.0 + math.cos(math.pi * progress))
    return cfg.peak_lr * (cfg.final_frac + (1.0 - cfg.final_frac) * cos_term)
