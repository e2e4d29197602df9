"""Deterministic RNG derivation.

Every stochastic component draws from `rng_for(root, *keys)` so that streams
are independent across purposes but reproducible from a single root seed.
Keys may be ints or strings; strings are folded through a stable hash
(Python's `hash` is salted per process, so it cannot be used here).
"""

from __future__ import annotations

import zlib

import numpy as np


def _fold(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"seed key must be int or str, got {type(key).__name__}")


def rng_for(root_seed: int, *keys) -> np.random.Generator:
    """Generator for the stream identified by (root_seed, *keys)."""
    entropy = [int(root_seed) & 0xFFFFFFFF] + [_fold(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
