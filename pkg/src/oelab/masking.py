"""Mask planning.

A MaskPlan assigns every token one of three roles:

  VISIBLE - encoded by the online encoder
  TARGET  - hidden from the encoder, predicted by the decoder
  IGNORE  - excluded from the step entirely

Map tokens are decode-only and can never be VISIBLE. The current planner
(plan_v11) makes every map token a TARGET and masks sensor tokens either by
whole timesteps (probability p_t) or by a uniform random split. The legacy
planner (bandset_mask_v1) draws a state per sensor bandset and ignores half
of each map group.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from oelab.tokens.grid import TokenSet

log = logging.getLogger(__name__)

VISIBLE = 0
TARGET = 1
IGNORE = 2


@dataclass
class MaskPlan:
    assignment: np.ndarray  # [N] int8
    used_time_mask: bool = False
    masked_times: tuple[int, ...] = ()
    bandset_states: dict[tuple[str, str], str] = field(default_factory=dict)

    @property
    def visible_idx(self) -> np.ndarray:
        return np.flatnonzero(self.assignment == VISIBLE)

    @property
    def target_idx(self) -> np.ndarray:
        return np.flatnonzero(self.assignment == TARGET)

    @property
    def ignore_idx(self) -> np.ndarray:
        return np.flatnonzero(self.assignment == IGNORE)

    def validate(self, token_set: TokenSet) -> None:
        if self.assignment.shape != (token_set.num_tokens,):
            raise ValueError(
                f"plan covers {self.assignment.shape[0]} tokens, "
                f"set has {token_set.num_tokens}"
            )
        decode_only = token_set.token_decode_only()
        if (self.assignment[decode_only] == VISIBLE).any():
            raise ValueError("decode-only token marked VISIBLE")
        if not (self.assignment == VISIBLE).any():
            raise ValueError("plan has no visible tokens")
        if not (self.assignment == TARGET).any():
            raise ValueError("plan has no target tokens")


def _masked_count(ratio: float, n: int) -> int:
    """Round-half-up count, clamped so both sides stay non-empty."""
    k = int(np.floor(ratio * n + 0.5))
    return min(max(k, 1), n - 1)


def random_mask(token_set: TokenSet, rng: np.random.Generator, ratio: float = 0.5) -> MaskPlan:
    """Uniform exact-count split of sensor tokens; maps all TARGET."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    decode_only = token_set.token_decode_only()
    assignment = np.full(token_set.num_tokens, TARGET, dtype=np.int8)
    pool = np.flatnonzero(~decode_only)
    if pool.size < 2:
        raise ValueError("need at least two sensor tokens to split")
    k = _masked_count(ratio, pool.size)
    picked = rng.choice(pool, size=k, replace=False)
    assignment[pool] = VISIBLE
    assignment[picked] = TARGET
    return MaskPlan(assignment=assignment)


def time_mask(token_set: TokenSet, rng: np.random.Generator) -> MaskPlan:
    """Hide whole timesteps: k ~ U{1..T-1} times become TARGET everywhere.

    Falls back to random_mask when the set has a single timestep.
    """
    t = token_set.timesteps
    if t < 2:
        log.warning("time_mask with T=%d; falling back to random_mask", t)
        return random_mask(token_set, rng)
    k = int(rng.integers(1, t))
    times = rng.choice(t, size=k, replace=False)
    decode_only = token_set.token_decode_only()
    token_time = token_set.token_field("time")
    assignment = np.where(np.isin(token_time, times), TARGET, VISIBLE).astype(np.int8)
    assignment[decode_only] = TARGET
    return MaskPlan(
        assignment=assignment,
        used_time_mask=True,
        masked_times=tuple(sorted(int(x) for x in times)),
    )


def bandset_mask_v1(token_set: TokenSet, rng: np.random.Generator) -> MaskPlan:
    """Per-bandset states for sensors; half of each map group ignored.

    Each sensor bandset draws uniformly from {online, target, ignore}
    (resampled until at least one is online). Map groups split their tokens
    half TARGET half IGNORE with exact counts.
    """
    sensor_groups = [i for i, g in enumerate(token_set.groups) if not g.decode_only]
    if not sensor_groups:
        raise ValueError("no sensor groups to mask")
    has_maps = any(g.decode_only for g in token_set.groups)
    states = {}
    for _ in range(1000):
        draw = rng.integers(0, 3, size=len(sensor_groups))
        # Need something to encode; maps supply targets when present.
        if (draw == 0).any() and (has_maps or (draw == 1).any()):
            break
    else:
        raise RuntimeError("could not draw a usable bandset state")
    names = ("online", "target", "ignore")
    assignment = np.empty(token_set.num_tokens, dtype=np.int8)
    offsets = token_set.group_offsets
    si = 0
    for gi, g in enumerate(token_set.groups):
        lo, hi = offsets[gi], offsets[gi + 1]
        if g.decode_only:
            states[(g.modality, g.bandset)] = "target"
            n = hi - lo
            half = n // 2
            local = np.full(n, TARGET, dtype=np.int8)
            drop = rng.choice(n, size=half, replace=False)
            local[drop] = IGNORE
            assignment[lo:hi] = local
        else:
            state = names[draw[si]]
            si += 1
            states[(g.modality, g.bandset)] = state
            assignment[lo:hi] = {"online": VISIBLE, "target": TARGET, "ignore": IGNORE}[
                state
            ]
    return MaskPlan(assignment=assignment, bandset_states=states)


def plan_v11(
    token_set: TokenSet,
    rng: np.random.Generator,
    ratio: float = 0.5,
    p_t: float = 0.5,
) -> MaskPlan:
    """Current strategy: maps always TARGET, timestep masking w.p. p_t."""
    if not 0.0 <= p_t <= 1.0:
        raise ValueError(f"p_t must be in [0, 1], got {p_t}")
    if rng.random() < p_t:
        return time_mask(token_set, rng)
    return random_mask(token_set, rng, ratio)


def make_plan(
    token_set: TokenSet,
    rng: np.random.Generator,
    strategy: str,
    ratio: float = 0.5,
    p_t: float = 0.5,
) -> MaskPlan:
    if strategy == "v11":
        return plan_v11(token_set, rng, ratio=ratio, p_t=p_t)
    if strategy == "v1":
        return bandset_mask_v1(token_set, rng)
    if strategy == "random":
        return random_mask(token_set, rng, ratio=ratio)
    if strategy == "time":
        return time_mask(token_set, rng)
    raise ValueError(f"unknown masking strategy {strategy!r}")
