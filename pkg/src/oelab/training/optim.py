"""Decoupled-weight-decay Adam over named parameter dicts.

Moment state is allocated lazily, on the first update in which a parameter
actually trains. A parameter whose multiplier is zero is skipped entirely:
no update, no state. That makes staged unfreezing observable from the
outside (state_names() grows at the unfreeze step).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from oelab.autodiff import DiffArray
from oelab.backend import kernels


@dataclass(frozen=True)
class OptimConfig:
    betas: tuple[float, float] = (0.9, 0.95)
    eps: float = 1e-8
    weight_decay: float = 0.05


def default_no_decay(params: dict[str, DiffArray]) -> set[str]:
    """Biases, norm gains/offsets (any 1-D tensor) and the mask token."""
    out = {name for name, p in params.items() if p.data.ndim <= 1}
    out |= {name for name in params if name.endswith("mask_token")}
    return out


class AdamW:
    def __init__(
        self,
        params: dict[str, DiffArray],
        cfg: OptimConfig = OptimConfig(),
        no_decay: set[str] | None = None,
    ):
        self.params = params
        self.cfg = cfg
        self.no_decay = default_no_decay(params) if no_decay is None else no_decay
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def state_names(self) -> set[str]:
        return set(self._m)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float, multipliers: dict[str, float] | None = None) -> None:
        """One update; parameters without a gradient are untouched.

        Per-parameter step counters keep bias correction exact for
        parameters that join training late.
        """
        for name, p in self.params.items():
            if p.grad is None:
                continue
            mult = 1.0 if multipliers is None else multipliers.get(name, 1.0)
            if mult == 0.0:
                continue
            if name not in self._m:
                self._m[name] = np.zeros_like(p.data)
                self._v[name] = np.zeros_like(p.data)
                self._t[name] = 0
            self._t[name] += 1
            wd = 0.0 if name in self.no_decay else self.cfg.weight_decay
            grad = np.ascontiguousarray(p.grad.reshape(-1))
            kernels.adamw_update(
                p.data.reshape(-1),
                grad,
                self._m[name].reshape(-1),
                self._v[name].reshape(-1),
                self._t[name],
                lr * mult,
                self.cfg.betas[0],
                self.cfg.betas[1],
                self.cfg.eps,
                wd,
            )
