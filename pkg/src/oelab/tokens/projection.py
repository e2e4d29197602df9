"""Token projections.

PatchEmbed is the learned linear lift from flattened patches to model width,
one weight matrix per (modality, bandset). TargetProjector is its frozen
counterpart on the target path: randomly initialized, never trained, and by
default nonlinear (one ReLU hidden layer) so targets carry band
interactions that a linear map would collapse.
"""

from __future__ import annotations

import numpy as np

from oelab.autodiff import DiffArray, constant, ops, parameter
from oelab.data.modalities import ModalitySpec
from oelab.seeding import rng_for
from oelab.tokens.grid import TokenSet


def _group_input_dim(spec: ModalitySpec, band_idx: tuple[int, ...], patch: int) -> int:
    channels = spec.num_classes if spec.kind == "map" else len(band_idx)
    return patch * patch * channels


class PatchEmbed:
    """Learned per-(modality, bandset) linear patch projection."""

    def __init__(
        self,
        registry: dict[str, ModalitySpec],
        grouping: str,
        patch: int,
        dim: int,
        seed: int = 0,
        init_std: float = 0.02,
    ):
        self.registry = registry
        self.grouping = grouping
        self.patch = patch
        self.dim = dim
        self.weights: dict[tuple[str, str], tuple[DiffArray, DiffArray]] = {}
        for name, spec in registry.items():
            if spec.decode_only:
                continue
            for bs, band_idx in spec.bandsets(grouping).items():
                d_in = _group_input_dim(spec, band_idx, patch)
                rng = rng_for(seed, "embed", name, bs)
                w = parameter(
                    rng.normal(0.0, init_std, size=(d_in, dim)), dtype=np.float32
                )
                b = parameter(np.zeros(dim), dtype=np.float32)
                self.weights[(name, bs)] = (w, b)

    def parameters(self) -> dict[str, DiffArray]:
        out = {}
        for (name, bs), (w, b) in self.weights.items():
            out[f"embed.{name}.{bs}.w"] = w
            out[f"embed.{name}.{bs}.b"] = b
        return out

    def embed(self, token_set: TokenSet) -> DiffArray:
        """[N, dim] embeddings in flat token order (encodable groups only)."""
        pieces = []
        for g in token_set.groups:
            if g.decode_only:
                raise ValueError(f"group {g.modality} is decode-only; cannot embed")
            w, b = self.weights[(g.modality, g.bandset)]
            pieces.append(ops.affine(constant(g.values, dtype=w.dtype), w, b))
        if len(pieces) == 1:
            return pieces[0]
        return ops.concat(pieces, axis=0)


class TargetProjector:
    """Frozen random projection producing latent targets; plain numpy."""

    def __init__(
        self,
        registry: dict[str, ModalitySpec],
        grouping: str,
        patch: int,
        dim: int,
        hidden: int = 64,
        mode: str = "nonlinear",
        seed: int = 0,
    ):
        if mode not in ("nonlinear", "linear"):
            raise ValueError(f"mode must be nonlinear or linear, got {mode!r}")
        self.registry = registry
        self.grouping = grouping
        self.patch = patch
        self.dim = dim
        self.hidden = hidden
        self.mode = mode
        self.layers: dict[tuple[str, str], tuple[np.ndarray, ...]] = {}
        for name, spec in registry.items():
            for bs, band_idx in spec.bandsets(grouping).items():
                d_in = _group_input_dim(spec, band_idx, patch)
                rng = rng_for(seed, "target", name, bs)
                if mode == "nonlinear":
                    w1 = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, hidden))
                    w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, dim))
                    self.layers[(name, bs)] = (
                        w1.astype(np.float32),
                        np.zeros(hidden, dtype=np.float32),
                        w2.astype(np.float32),
                        np.zeros(dim, dtype=np.float32),
                    )
                else:
                    w = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, dim))
                    self.layers[(name, bs)] = (
                        w.astype(np.float32),
                        np.zeros(dim, dtype=np.float32),
                    )

    def apply_group(self, modality: str, bandset: str, values: np.ndarray) -> np.ndarray:
        layer = self.layers[(modality, bandset)]
        if self.mode == "nonlinear":
            w1, b1, w2, b2 = layer
            h = np.maximum(values @ w1 + b1, 0.0)
            return h @ w2 + b2
        w, b = layer
        return values @ w + b

    def apply(self, token_set: TokenSet) -> np.ndarray:
        """[N, dim] frozen targets in flat token order, all groups."""
        return np.concatenate(
            [
                self.apply_group(g.modality, g.bandset, g.values)
                for g in token_set.groups
            ],
            axis=0,
        )
