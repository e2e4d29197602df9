"""Band dropout for the online path.

One dropout rate r ~ U[0, r_max] is drawn per forward pass and shared by the
whole micro-batch; each (scene, band) is then zeroed with probability r.
Dropout-exempt modalities and map products are never touched, and the target
path works from the original TokenSet, so targets see every band.
"""

from __future__ import annotations

import numpy as np

from oelab.data.modalities import ModalitySpec
from oelab.tokens.grid import TokenSet


def draw_dropout_rate(rng: np.random.Generator, r_max: float) -> float:
    if not 0.0 <= r_max < 1.0:
        raise ValueError(f"r_max must be in [0, 1), got {r_max}")
    return float(rng.uniform(0.0, r_max)) if r_max > 0.0 else 0.0


def draw_band_mask(
    rng: np.random.Generator,
    registry: dict[str, ModalitySpec],
    rate: float,
) -> dict[str, np.ndarray]:
    """Per-modality boolean drop flags, one per band, for one scene."""
    mask = {}
    for name, spec in registry.items():
        if spec.kind != "raster" or spec.dropout_exempt:
            continue
        mask[name] = rng.random(spec.num_bands) < rate
    return mask


def apply_band_dropout(
    token_set: TokenSet,
    band_mask: dict[str, np.ndarray],
) -> TokenSet:
    """New TokenSet with dropped bands zeroed in place of their channel."""
    out = token_set.copy()
    for g in out.groups:
        flags = band_mask.get(g.modality)
        if flags is None:
            continue
        c = len(g.band_indices)
        view = g.values.reshape(len(g), -1, c)
        for pos, band in enumerate(g.band_indices):
            if flags[band]:
                view[:, :, pos] = 0.0
    return out
