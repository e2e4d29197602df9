"""Patchification.

A scene becomes a TokenSet: one TokenGroup per (modality, bandset), each
holding flattened P x P x C_b patch values plus (time, row, col) metadata.
Flat token order is group order, then time-major raster order within a
group; everything downstream (masking, embeddings, losses) indexes into
that flat order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from oelab.data.modalities import ModalitySpec
from oelab.data.scenes import Scene


@dataclass
class TokenGroup:
    modality: str
    bandset: str
    band_indices: tuple[int, ...]
    values: np.ndarray  # [N, P*P*C_b] float32
    time: np.ndarray  # [N] int32
    row: np.ndarray  # [N] int32
    col: np.ndarray  # [N] int32
    decode_only: bool

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass
class TokenSet:
    patch: int
    grid_h: int
    grid_w: int
    timesteps: int
    grouping: str
    groups: list[TokenGroup] = field(default_factory=list)

    @property
    def num_tokens(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def group_offsets(self) -> np.ndarray:
        sizes = [len(g) for g in self.groups]
        return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

    def token_group_ids(self) -> np.ndarray:
        return np.repeat(
            np.arange(len(self.groups), dtype=np.int64),
            [len(g) for g in self.groups],
        )

    def token_field(self, name: str) -> np.ndarray:
        """Concatenated per-token metadata ("time", "row", "col")."""
        return np.concatenate([getattr(g, name) for g in self.groups])

    def token_decode_only(self) -> np.ndarray:
        return np.concatenate(
            [np.full(len(g), g.decode_only, dtype=bool) for g in self.groups]
        )

    def token_modalities(self) -> list[str]:
        out: list[str] = []
        for g in self.groups:
            out.extend([g.modality] * len(g))
        return out

    def copy(self) -> "TokenSet":
        return TokenSet(
            patch=self.patch,
            grid_h=self.grid_h,
            grid_w=self.grid_w,
            timesteps=self.timesteps,
            grouping=self.grouping,
            groups=[
                TokenGroup(
                    g.modality,
                    g.bandset,
                    g.band_indices,
                    g.values.copy(),
                    g.time.copy(),
                    g.row.copy(),
                    g.col.copy(),
                    g.decode_only,
                )
                for g in self.groups
            ],
        )


def _patch_rows(arr: np.ndarray, patch: int) -> np.ndarray:
    """[T, H, W, C] -> [T*gh*gw, patch*patch*C], time-major then row, col."""
    t, h, w, c = arr.shape
    gh, gw = h // patch, w // patch
    blocks = arr.reshape(t, gh, patch, gw, patch, c).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(blocks.reshape(t * gh * gw, patch * patch * c))


def patchify_scene(
    scene: Scene,
    registry: dict[str, ModalitySpec],
    patch: int,
    grouping: str,
    modalities: list[str] | None = None,
) -> TokenSet:
    cfg = scene.config
    if cfg.height % patch or cfg.width % patch:
        raise ValueError(f"patch {patch} does not tile {cfg.height}x{cfg.width}")
    gh, gw = cfg.height // patch, cfg.width // patch
    ts = TokenSet(
        patch=patch, grid_h=gh, grid_w=gw, timesteps=cfg.timesteps, grouping=grouping
    )
    names = modalities if modalities is not None else list(registry)
    for name in names:
        spec = registry[name]
        if spec.kind == "map":
            ids = scene.maps[name]
            cube = (ids[None, :, :, None] == np.arange(spec.num_classes)).astype(
                np.float32
            )  # [1, H, W, M] one-hot
        else:
            cube = scene.rasters[name]
        t_m = cube.shape[0]
        grid_t, grid_r, grid_c = np.meshgrid(
            np.arange(t_m, dtype=np.int32),
            np.arange(gh, dtype=np.int32),
            np.arange(gw, dtype=np.int32),
            indexing="ij",
        )
        for bs_name, band_idx in spec.bandsets(grouping).items():
            sliced = cube if spec.kind == "map" else cube[..., list(band_idx)]
            ts.groups.append(
                TokenGroup(
                    modality=name,
                    bandset=bs_name,
                    band_indices=tuple(band_idx),
                    values=_patch_rows(sliced, patch),
                    time=grid_t.reshape(-1),
                    row=grid_r.reshape(-1),
                    col=grid_c.reshape(-1),
                    decode_only=spec.decode_only,
                )
            )
    return ts


def unpatchify_raster(group: TokenGroup, grid_h: int, grid_w: int, patch: int) -> np.ndarray:
    """Inverse of the patch flattening for one group: [T, H, W, C_b]."""
    n = len(group)
    c = group.values.shape[1] // (patch * patch)
    t = n // (grid_h * grid_w)
    blocks = group.values.reshape(t, grid_h, grid_w, patch, patch, c)
    return np.ascontiguousarray(
        blocks.transpose(0, 1, 3, 2, 4, 5).reshape(t, grid_h * patch, grid_w * patch, c)
    )


def bandset_index(
    registry: dict[str, ModalitySpec], grouping: str
) -> dict[tuple[str, str], int]:
    """Stable id per (modality, bandset) pair, registry order."""
    out: dict[tuple[str, str], int] = {}
    for name, spec in registry.items():
        for bs in spec.bandsets(grouping):
            out[(name, bs)] = len(out)
    return out


def count_tokens_by_modality(
    registry: dict[str, ModalitySpec],
    grouping: str,
    height: int,
    width: int,
    timesteps: int,
    patch: int,
    modalities: list[str] | None = None,
) -> dict[str, int]:
    """Closed-form token counts; patchify_scene must agree exactly."""
    if height % patch or width % patch:
        raise ValueError(f"patch {patch} does not tile {height}x{width}")
    cells = (height // patch) * (width // patch)
    names = modalities if modalities is not None else list(registry)
    out = {}
    for name in names:
        spec = registry[name]
        t_m = timesteps if spec.temporal else 1
        out[name] = len(spec.bandsets(grouping)) * t_m * cells
    return out


def count_tokens(
    registry: dict[str, ModalitySpec],
    grouping: str,
    height: int,
    width: int,
    timesteps: int,
    patch: int,
    modalities: list[str] | None = None,
) -> int:
    return sum(
        count_tokens_by_modality(
            registry, grouping, height, width, timesteps, patch, modalities
        ).values()
    )
