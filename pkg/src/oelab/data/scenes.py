"""Synthetic multimodal scene generator.

A scene is driven by a latent class field: coarse noise per latent class is
upsampled to pixel resolution and softmaxed into mixture weights. Every
sensor reads the same field through its own fixed band signatures (shared
across scenes via the mixing seed, so representations transfer), plus a
scene-wide seasonal oscillation, per-scene nuisance gain/offset, and pixel
noise. Map products are deterministic relabelings of the latent field.

Labels:
  scene_class    - dominant latent class of the pixel composition
  temporal_class - index of the seasonal frequency used by the scene
  patch_seg      - per-patch mode of the latent class map
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from oelab.data.modalities import ModalitySpec, default_registry
from oelab.seeding import rng_for

_BIAS_LADDER = (0.05, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2, 6.4)


@dataclass(frozen=True)
class SceneConfig:
    height: int = 32
    width: int = 32
    timesteps: int = 4
    num_classes: int = 4
    field_cells: int = 4  # coarse noise resolution per axis
    softmax_temp: float = 0.5  # lower = sharper class mixtures
    temporal_amp: float = 0.9
    noise_sigma: float = 0.35
    gain_range: tuple[float, float] = (0.5, 1.5)
    offset_sigma: float = 0.1
    mixing_seed: int = 7012025  # shared across scenes; fixes signatures

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.timesteps < 1:
            raise ValueError("height, width, timesteps must be positive")
        if self.num_classes < 2:
            raise ValueError("need at least two latent classes")


@dataclass
class Scene:
    seed: int
    config: SceneConfig
    scene_class: int
    temporal_class: int
    class_map: np.ndarray  # [H, W] int8 latent classes
    detail_bit: np.ndarray  # [H, W] uint8 sub-class detail
    rasters: dict[str, np.ndarray] = field(default_factory=dict)  # [T, H, W, C] f32
    maps: dict[str, np.ndarray] = field(default_factory=dict)  # [H, W] int8

    def patch_seg(self, patch: int) -> np.ndarray:
        return patch_mode(self.class_map, patch)


def patch_mode(class_map: np.ndarray, patch: int) -> np.ndarray:
    """Per-patch modal class; ties resolve to the smallest class id."""
    h, w = class_map.shape
    if h % patch or w % patch:
        raise ValueError(f"patch {patch} does not tile {h}x{w}")
    gh, gw = h // patch, w // patch
    blocks = class_map.reshape(gh, patch, gw, patch).swapaxes(1, 2).reshape(gh, gw, -1)
    k = int(class_map.max()) + 1
    out = np.zeros((gh, gw), dtype=np.int8)
    for i in range(gh):
        for j in range(gw):
            out[i, j] = np.argmax(np.bincount(blocks[i, j], minlength=k))
    return out


def _bilinear_upsample(coarse: np.ndarray, h: int, w: int) -> np.ndarray:
    """[k, fc, fc] -> [k, h, w], cell centers aligned."""
    k, fh, fw = coarse.shape
    ys = (np.arange(h) + 0.5) / h * fh - 0.5
    xs = (np.arange(w) + 0.5) / w * fw - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, fh - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, fw - 1)
    y1 = np.clip(y0 + 1, 0, fh - 1)
    x1 = np.clip(x0 + 1, 0, fw - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[None, :, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, None, :]
    top = coarse[:, y0][:, :, x0] * (1 - wx) + coarse[:, y0][:, :, x1] * wx
    bot = coarse[:, y1][:, :, x0] * (1 - wx) + coarse[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def _class_weights(cfg: SceneConfig, rng: np.random.Generator, target: int):
    """Mixture weights [H, W, K] whose pixel-majority class equals target."""
    k = cfg.num_classes
    logits_c = rng.standard_normal((k, cfg.field_cells, cfg.field_cells))
    logits = _bilinear_upsample(logits_c, cfg.height, cfg.width)
    for bias in _BIAS_LADDER:
        biased = logits.copy()
        biased[target] += bias
        class_map = biased.argmax(axis=0)
        counts = np.bincount(class_map.reshape(-1), minlength=k)
        if counts.argmax() == target:
            z = biased / cfg.softmax_temp
            z -= z.max(axis=0, keepdims=True)
            e = np.exp(z)
            weights = (e / e.sum(axis=0, keepdims=True)).transpose(1, 2, 0)
            return weights, class_map.astype(np.int8)
    raise RuntimeError("bias ladder exhausted; composition never reached target class")


def _signature(cfg: SceneConfig, spec: ModalitySpec, key: str) -> np.ndarray:
    rng = rng_for(cfg.mixing_seed, "mix", spec.name, key)
    if key == "sig":
        return rng.standard_normal((cfg.num_classes, spec.num_bands))
    if key == "tmod":
        return rng.standard_normal(spec.num_bands)
    raise KeyError(key)


def _map_permutation(cfg: SceneConfig, spec: ModalitySpec) -> np.ndarray:
    rng = rng_for(cfg.mixing_seed, "mix", spec.name, "perm")
    if spec.num_classes >= 2 * cfg.num_classes:
        return rng.permutation(2 * cfg.num_classes)
    return rng.permutation(cfg.num_classes)


def render_map(cfg: SceneConfig, spec: ModalitySpec, class_map, detail_bit) -> np.ndarray:
    """Relabel the latent field for one map product (pure function)."""
    perm = _map_permutation(cfg, spec)
    if spec.num_classes >= 2 * cfg.num_classes:
        idx = class_map.astype(np.int32) * 2 + detail_bit
        return perm[idx].astype(np.int8)
    return (perm[class_map.astype(np.int32)] % spec.num_classes).astype(np.int8)


def make_scene(
    seed: int,
    cfg: SceneConfig | None = None,
    registry: dict[str, ModalitySpec] | None = None,
    scene_class: int | None = None,
    temporal_class: int | None = None,
) -> Scene:
    cfg = cfg or SceneConfig()
    registry = registry if registry is not None else default_registry()
    rng = rng_for(seed, "scene")
    if scene_class is None:
        scene_class = int(rng.integers(cfg.num_classes))
    if temporal_class is None:
        temporal_class = int(rng.integers(cfg.num_classes))

    weights, class_map = _class_weights(cfg, rng_for(seed, "field"), scene_class)
    peak = weights.max(axis=2)
    detail_bit = (peak > np.median(peak)).astype(np.uint8)

    freq = (temporal_class + 1) / 2.0
    phase = rng_for(seed, "phase").uniform(0.0, 2.0 * math.pi)

    scene = Scene(
        seed=seed,
        config=cfg,
        scene_class=scene_class,
        temporal_class=temporal_class,
        class_map=class_map,
        detail_bit=detail_bit,
    )

    for spec in registry.values():
        if spec.kind == "map":
            scene.maps[spec.name] = render_map(cfg, spec, class_map, detail_bit)
            continue
        t_m = cfg.timesteps if spec.temporal else 1
        sig = _signature(cfg, spec, "sig")  # [K, C]
        tmod = _signature(cfg, spec, "tmod")  # [C]
        base = weights @ sig  # [H, W, C]
        season = np.sin(
            2.0 * math.pi * freq * (np.arange(t_m) / max(t_m, 1)) + phase
        )  # [T]
        nrng = rng_for(seed, "nuisance", spec.name)
        gain = nrng.uniform(*cfg.gain_range)
        offset = nrng.normal(0.0, cfg.offset_sigma)
        noise = rng_for(seed, "noise", spec.name).normal(
            0.0, cfg.noise_sigma, size=(t_m, cfg.height, cfg.width, spec.num_bands)
        )
        cube = (
            gain * (base[None] + cfg.temporal_amp * season[:, None, None, None] * tmod)
            + offset
            + noise
        )
        scene.rasters[spec.name] = np.ascontiguousarray(cube, dtype=np.float32)

    return scene


def make_dataset(
    n: int,
    root_seed: int = 0,
    cfg: SceneConfig | None = None,
    registry: dict[str, ModalitySpec] | None = None,
) -> list[Scene]:
    """n scenes with scene and temporal classes balanced round-robin."""
    cfg = cfg or SceneConfig()
    k = cfg.num_classes
    return [
        make_scene(
            seed=int(rng_for(root_seed, "dataset", i).integers(2**31)),
            cfg=cfg,
            registry=registry,
            scene_class=i % k,
            temporal_class=(i // k) % k,
        )
        for i in range(n)
    ]
