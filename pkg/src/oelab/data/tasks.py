"""Label extraction and dataset splits for evaluation tasks."""

from __future__ import annotations

import numpy as np

from oelab.data.scenes import Scene
from oelab.seeding import rng_for


def scene_class_labels(scenes: list[Scene]) -> np.ndarray:
    return np.array([s.scene_class for s in scenes], dtype=np.int64)


def temporal_class_labels(scenes: list[Scene]) -> np.ndarray:
    return np.array([s.temporal_class for s in scenes], dtype=np.int64)


def patch_seg_labels(scenes: list[Scene], patch: int = 4) -> np.ndarray:
    """[num_scenes, H/patch, W/patch] modal latent class per patch."""
    return np.stack([s.patch_seg(patch) for s in scenes]).astype(np.int64)


def split_indices(
    n: int, fractions: tuple[float, float, float] = (0.6, 0.2, 0.2), seed: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shuffled train/val/test index arrays covering range(n) exactly once."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    perm = rng_for(seed, "split").permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]
