"""Finetuning parameter-group plans.

A plan maps (parameter name, step) to a learning-rate multiplier. Three
schemes:

  uniform      - everything trains at the base rate from step 0
  frozenstart  - backbone frozen for the first fraction of steps, then
                 trained at a tenth of the base rate; head always full rate
  llrd         - static layer-wise decay: top encoder block gets `decay`,
                 each block below multiplies by `decay` again, patch and
                 metadata embeddings sit below the deepest block

Head parameters are any whose name starts with "head.".
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

_BLOCK_RE = re.compile(r"^enc\.block(\d+)\.")
_EMBED_NAMES = ("embed.",)
_EMBED_TABLES = ("enc.mod_table", "enc.bs_table")


def llrd_multipliers(
    names: list[str], enc_blocks: int, decay: float = 0.65
) -> dict[str, float]:
    out: dict[str, float] = {}
    for name in names:
        m = _BLOCK_RE.match(name)
        if m:
            i = int(m.group(1))
            out[name] = decay ** (enc_blocks - i)
        elif name.startswith(_EMBED_NAMES) or name in _EMBED_TABLES:
            out[name] = decay ** (enc_blocks + 1)
        else:
            out[name] = 1.0
    return out


@dataclass
class FinetunePlan:
    names: list[str]
    total_steps: int
    fn: Callable[[str, int], float]

    def multiplier(self, name: str, step: int) -> float:
        return self.fn(name, step)

    def multipliers(self, step: int) -> dict[str, float]:
        return {n: self.fn(n, step) for n in self.names}


def uniform_plan(names: list[str], total_steps: int) -> FinetunePlan:
    return FinetunePlan(names, total_steps, lambda name, step: 1.0)


def frozenstart_plan(
    names: list[str],
    total_steps: int,
    frozen_frac: float = 0.2,
    thaw_scale: float = 0.1,
) -> FinetunePlan:
    if not 0.0 <= frozen_frac < 1.0:
        raise ValueError("frozen_frac must be in [0, 1)")
    freeze_until = int(round(frozen_frac * total_steps))

    def fn(name: str, step: int) -> float:
        if name.startswith("head."):
            return 1.0
        return 0.0 if step < freeze_until else thaw_scale

    return FinetunePlan(names, total_steps, fn)


def llrd_plan(
    names: list[str], total_steps: int, enc_blocks: int, decay: float = 0.65
) -> FinetunePlan:
    table = llrd_multipliers(names, enc_blocks, decay)

    def fn(name: str, step: int) -> float:
        return table.get(name, 1.0)

    return FinetunePlan(names, total_steps, fn)
