"""Stride-P convolution vs flattened-patch linear projection.

A patch embed implemented as a non-overlapping conv and one implemented as
reshape + matmul compute the same function when the conv kernel is
flattened in patch-row, patch-col, channel order. conv_patch_embed is the
slow direct-sum oracle; linear_patch_embed is the production path.
"""

from __future__ import annotations

import numpy as np

from oelab.tokens.grid import _patch_rows


def conv_patch_embed(image: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Direct conv, stride = kernel size. image [T,H,W,C], weight [P,P,C,D]."""
    t, h, w, c = image.shape
    p, p2, cw, d = weight.shape
    if p != p2 or cw != c:
        raise ValueError(f"weight {weight.shape} incompatible with image {image.shape}")
    if h % p or w % p:
        raise ValueError(f"kernel {p} does not tile {h}x{w}")
    gh, gw = h // p, w // p
    out = np.empty((t, gh, gw, d), dtype=np.result_type(image, weight))
    for ti in range(t):
        for i in range(gh):
            for j in range(gw):
                patch = image[ti, i * p : (i + 1) * p, j * p : (j + 1) * p, :]
                out[ti, i, j] = np.tensordot(patch, weight, axes=3) + bias
    return out


def conv_weight_to_linear(weight: np.ndarray) -> np.ndarray:
    """[P, P, C, D] -> [P*P*C, D], matching the patch flattening order."""
    p, p2, c, d = weight.shape
    return np.ascontiguousarray(weight.reshape(p * p2 * c, d))


def linear_patch_embed(image: np.ndarray, weight2d: np.ndarray, bias: np.ndarray, patch: int):
    """Reshape + matmul path; same output layout as conv_patch_embed."""
    t, h, w, _ = image.shape
    rows = _patch_rows(image, patch)
    out = rows @ weight2d + bias
    return out.reshape(t, h // patch, w // patch, -1)
