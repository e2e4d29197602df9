"""Encoder-decoder transformer over patch tokens.

The online path embeds visible sensor tokens, runs pre-LN transformer
blocks, and pools a scene vector. The decoder projects encoder outputs to a
narrower width, appends a learned mask token per TARGET position (metadata
embeddings tell the decoder what to predict), and regresses latent targets
produced by a frozen random projector. Scenes never attend across the
micro-batch; batching is a loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from oelab.autodiff import DiffArray, constant, ops, parameter
from oelab.data.modalities import ModalitySpec, default_registry
from oelab.masking import MaskPlan, make_plan
from oelab.seeding import rng_for
from oelab.tokens.dropout import apply_band_dropout, draw_band_mask, draw_dropout_rate
from oelab.tokens.grid import TokenSet, bandset_index
from oelab.tokens.projection import PatchEmbed, TargetProjector


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    enc_blocks: int = 4
    dec_blocks: int = 2
    dec_dim: int = 32
    heads: int = 4
    dec_heads: int = 4
    mlp_ratio: int = 4
    target_hidden: int = 12
    target_mode: str = "nonlinear"
    patch: int = 8
    grouping: str = "single"
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.dim % self.heads or self.dec_dim % self.dec_heads:
            raise ValueError("width must be divisible by head count")
        if self.dim % 4 or self.dec_dim % 4:
            raise ValueError("width must be divisible by 4 for positional codes")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @staticmethod
    def preset(name: str, **overrides) -> "ModelConfig":
        presets = {
            "nano": dict(
                dim=64, enc_blocks=4, dec_blocks=2, dec_dim=32, heads=4, target_hidden=12
            ),
            "tiny": dict(
                dim=96, enc_blocks=6, dec_blocks=2, dec_dim=64, heads=6, target_hidden=64
            ),
            "base": dict(
                dim=128, enc_blocks=8, dec_blocks=2, dec_dim=96, heads=8, target_hidden=64
            ),
        }
        if name not in presets:
            raise ValueError(f"unknown preset {name!r}; pick from {sorted(presets)}")
        return ModelConfig(**{**presets[name], **overrides})


def sincos_1d(pos: np.ndarray, dim: int) -> np.ndarray:
    """[N] integer positions -> [N, dim] sin/cos code (half sin, half cos)."""
    half = dim // 2
    freqs = 1.0 / (10000.0 ** (np.arange(half) / half))
    angles = pos[:, None].astype(np.float64) * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def metadata_embedding(token_set: TokenSet, dim: int) -> np.ndarray:
    """Deterministic [N, dim] code: row/col halves plus full-width time."""
    row = token_set.token_field("row")
    col = token_set.token_field("col")
    time = token_set.token_field("time")
    spatial = np.concatenate([sincos_1d(row, dim // 2), sincos_1d(col, dim // 2)], axis=1)
    return spatial + sincos_1d(time, dim)


@dataclass
class ViewOutput:
    preds: DiffArray  # [n_target, dim]
    targets: np.ndarray  # [n_target, dim]
    modality_ids: np.ndarray  # [n_target]
    decode_only: np.ndarray  # [n_target] bool
    pooled: DiffArray  # [1, dim]
    plan: MaskPlan


@dataclass
class TwoViewBatch:
    preds_a: DiffArray
    targets_a: np.ndarray
    modality_a: np.ndarray
    scene_a: np.ndarray
    decode_only_a: np.ndarray
    preds_b: DiffArray
    targets_b: np.ndarray
    modality_b: np.ndarray
    scene_b: np.ndarray
    decode_only_b: np.ndarray
    pooled_a: DiffArray  # [B, dim]
    pooled_b: DiffArray  # [B, dim]
    plans_a: list[MaskPlan] = field(default_factory=list)
    plans_b: list[MaskPlan] = field(default_factory=list)


class Model:
    def __init__(self, cfg: ModelConfig, registry: dict[str, ModalitySpec] | None = None):
        self.cfg = cfg
        self.registry = registry if registry is not None else default_registry()
        self.np_dtype = cfg.np_dtype
        self.mod_ids = {name: i for i, name in enumerate(self.registry)}
        self.bs_ids = bandset_index(self.registry, cfg.grouping)
        self.embed = PatchEmbed(
            self.registry, cfg.grouping, cfg.patch, cfg.dim, seed=cfg.seed
        )
        if cfg.dtype == "float64":
            for w, b in self.embed.weights.values():
                w.data = w.data.astype(np.float64)
                b.data = b.data.astype(np.float64)
        self.target_projector = TargetProjector(
            self.registry,
            cfg.grouping,
            cfg.patch,
            cfg.dim,
            hidden=cfg.target_hidden,
            mode=cfg.target_mode,
            seed=cfg.seed,
        )
        self.params: dict[str, DiffArray] = {}
        rng = rng_for(cfg.seed, "model")
        self._build(rng)

    # -- construction -------------------------------------------------------

    def _p(self, name: str, array: np.ndarray) -> DiffArray:
        arr = parameter(array, dtype=self.np_dtype)
        self.params[name] = arr
        return arr

    def _build(self, rng: np.random.Generator) -> None:
        cfg = self.cfg
        d, dd = cfg.dim, cfg.dec_dim
        n_mod, n_bs = len(self.mod_ids), len(self.bs_ids)

        def w(shape, std=0.02):
            return rng.normal(0.0, std, size=shape)

        self._p("enc.mod_table", w((n_mod, d)))
        self._p("enc.bs_table", w((n_bs, d)))
        for i in range(cfg.enc_blocks):
            self._block_params(f"enc.block{i}", d, cfg.mlp_ratio, rng)
        self._p("enc.final_ln.g", np.ones(d))
        self._p("enc.final_ln.b", np.zeros(d))

        self._p("dec.proj.w", w((d, dd)))
        self._p("dec.proj.b", np.zeros(dd))
        self._p("dec.mask_token", w((1, dd)))
        self._p("dec.mod_table", w((n_mod, dd)))
        self._p("dec.bs_table", w((n_bs, dd)))
        for i in range(cfg.dec_blocks):
            self._block_params(f"dec.block{i}", dd, cfg.mlp_ratio, rng)
        self._p("dec.final_ln.g", np.ones(dd))
        self._p("dec.final_ln.b", np.zeros(dd))
        self._p("dec.head.w", w((dd, d)))
        self._p("dec.head.b", np.zeros(d))

    def _block_params(self, prefix: str, dim: int, mlp_ratio: int, rng) -> None:
        def w(shape, std=0.02):
            return rng.normal(0.0, std, size=shape)

        self._p(f"{prefix}.ln1.g", np.ones(dim))
        self._p(f"{prefix}.ln1.b", np.zeros(dim))
        for part in ("q", "k", "v", "out"):
            self._p(f"{prefix}.attn.{part}.w", w((dim, dim)))
            self._p(f"{prefix}.attn.{part}.b", np.zeros(dim))
        self._p(f"{prefix}.ln2.g", np.ones(dim))
        self._p(f"{prefix}.ln2.b", np.zeros(dim))
        self._p(f"{prefix}.mlp.fc1.w", w((dim, mlp_ratio * dim)))
        self._p(f"{prefix}.mlp.fc1.b", np.zeros(mlp_ratio * dim))
        self._p(f"{prefix}.mlp.fc2.w", w((mlp_ratio * dim, dim)))
        self._p(f"{prefix}.mlp.fc2.b", np.zeros(dim))

    def parameters(self) -> dict[str, DiffArray]:
        return {**self.embed.parameters(), **self.params}

    # -- forward pieces -----------------------------------------------------

    def _affine(self, x: DiffArray, name: str) -> DiffArray:
        return ops.affine(x, self.params[f"{name}.w"], self.params[f"{name}.b"])

    def _ln(self, x: DiffArray, name: str) -> DiffArray:
        return ops.layer_norm(x, self.params[f"{name}.g"], self.params[f"{name}.b"])

    def _attention(self, x: DiffArray, prefix: str, dim: int, heads: int) -> DiffArray:
        n = x.shape[0]
        dh = dim // heads
        parts = []
        for part in ("q", "k", "v"):
            y = self._affine(x, f"{prefix}.attn.{part}")
            parts.append(ops.transpose(ops.reshape(y, (n, heads, dh)), (1, 0, 2)))
        q, k, v = parts
        scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
        ctx = ops.matmul(ops.softmax(scores, axis=-1), v)
        ctx = ops.reshape(ops.transpose(ctx, (1, 0, 2)), (n, dim))
        return self._affine(ctx, f"{prefix}.attn.out")

    def _block(self, x: DiffArray, prefix: str, dim: int, heads: int) -> DiffArray:
        x = ops.add(x, self._attention(self._ln(x, f"{prefix}.ln1"), prefix, dim, heads))
        h = ops.gelu(self._affine(self._ln(x, f"{prefix}.ln2"), f"{prefix}.mlp.fc1"))
        return ops.add(x, self._affine(h, f"{prefix}.mlp.fc2"))

    def _token_ids(self, token_set: TokenSet) -> tuple[np.ndarray, np.ndarray]:
        mods = np.concatenate(
            [np.full(len(g), self.mod_ids[g.modality], dtype=np.intp) for g in token_set.groups]
        )
        bss = np.concatenate(
            [
                np.full(len(g), self.bs_ids[(g.modality, g.bandset)], dtype=np.intp)
                for g in token_set.groups
            ]
        )
        return mods, bss

    def encodable_idx(self, token_set: TokenSet) -> np.ndarray:
        return np.flatnonzero(~token_set.token_decode_only())

    def encode(self, token_set: TokenSet, visible_idx: np.ndarray) -> DiffArray:
        """[len(visible_idx), dim] contextual embeddings of visible tokens."""
        cfg = self.cfg
        enc_positions = self.encodable_idx(token_set)
        if not np.isin(visible_idx, enc_positions).all():
            raise ValueError("visible_idx includes decode-only tokens")
        enc_ts = TokenSet(
            patch=token_set.patch,
            grid_h=token_set.grid_h,
            grid_w=token_set.grid_w,
            timesteps=token_set.timesteps,
            grouping=token_set.grouping,
            groups=[g for g in token_set.groups if not g.decode_only],
        )
        emb = self.embed.embed(enc_ts)  # [n_encodable, dim]
        if emb.dtype != self.np_dtype:
            raise TypeError("embedding dtype does not match model dtype")
        rows = np.searchsorted(enc_positions, visible_idx)
        x = ops.gather_rows(emb, rows)

        meta = metadata_embedding(token_set, cfg.dim)[visible_idx]
        mods, bss = self._token_ids(token_set)
        x = ops.add(x, constant(meta, dtype=self.np_dtype))
        x = ops.add(x, ops.gather_rows(self.params["enc.mod_table"], mods[visible_idx]))
        x = ops.add(x, ops.gather_rows(self.params["enc.bs_table"], bss[visible_idx]))
        for i in range(cfg.enc_blocks):
            x = self._block(x, f"enc.block{i}", cfg.dim, cfg.heads)
        return self._ln(x, "enc.final_ln")

    def encode_all(self, token_set: TokenSet) -> DiffArray:
        """Probe path: every sensor token visible."""
        return self.encode(token_set, self.encodable_idx(token_set))

    def decode(
        self, enc_out: DiffArray, token_set: TokenSet, target_idx: np.ndarray
    ) -> DiffArray:
        """[len(target_idx), dim] predictions for TARGET positions."""
        cfg = self.cfg
        n_vis = enc_out.shape[0]
        n_tgt = target_idx.shape[0]
        if n_tgt == 0:
            raise ValueError("decode needs at least one target token")
        z_vis = self._affine(enc_out, "dec.proj")
        mask = ops.gather_rows(
            self.params["dec.mask_token"], np.zeros(n_tgt, dtype=np.intp)
        )
        meta = metadata_embedding(token_set, cfg.dec_dim)[target_idx]
        mods, bss = self._token_ids(token_set)
        z_tgt = ops.add(mask, constant(meta, dtype=self.np_dtype))
        z_tgt = ops.add(z_tgt, ops.gather_rows(self.params["dec.mod_table"], mods[target_idx]))
        z_tgt = ops.add(z_tgt, ops.gather_rows(self.params["dec.bs_table"], bss[target_idx]))
        z = ops.concat([z_vis, z_tgt], axis=0)
        for i in range(cfg.dec_blocks):
            z = self._block(z, f"dec.block{i}", cfg.dec_dim, cfg.dec_heads)
        z = self._ln(z, "dec.final_ln")
        out_rows = ops.gather_rows(z, np.arange(n_vis, n_vis + n_tgt))
        return self._affine(out_rows, "dec.head")

    def targets(self, token_set: TokenSet, target_idx: np.ndarray) -> np.ndarray:
        """Frozen latent targets, computed from the un-dropped token values."""
        full = self.target_projector.apply(token_set)
        return full[target_idx].astype(self.np_dtype)

    # -- views --------------------------------------------------------------

    def forward_view(
        self,
        token_set: TokenSet,
        plan: MaskPlan,
        band_mask: dict[str, np.ndarray] | None = None,
    ) -> ViewOutput:
        plan.validate(token_set)
        online_ts = apply_band_dropout(token_set, band_mask) if band_mask else token_set
        enc = self.encode(online_ts, plan.visible_idx)
        target_idx = plan.target_idx
        preds = self.decode(enc, online_ts, target_idx)
        targets = self.targets(token_set, target_idx)
        mods, _ = self._token_ids(token_set)
        pooled = ops.reshape(ops.reduce_mean(enc, axis=0), (1, self.cfg.dim))
        return ViewOutput(
            preds=preds,
            targets=targets,
            modality_ids=mods[target_idx].astype(np.int64),
            decode_only=token_set.token_decode_only()[target_idx],
            pooled=pooled,
            plan=plan,
        )


def forward_two_views(
    model: Model,
    token_sets: list[TokenSet],
    rng: np.random.Generator,
    strategy: str = "v11",
    ratio: float = 0.5,
    p_t: float = 0.5,
    r_max: float = 0.2,
) -> TwoViewBatch:
    """Two independently masked, independently band-dropped views per scene.

    The dropout rate is drawn once per view and shared across the
    micro-batch; band masks are per scene.
    """
    rates = (
        draw_dropout_rate(rng, r_max),
        draw_dropout_rate(rng, r_max),
    )
    views: tuple[list[ViewOutput], list[ViewOutput]] = ([], [])
    for ts in token_sets:
        for v in range(2):
            plan = make_plan(ts, rng, strategy, ratio=ratio, p_t=p_t)
            band_mask = (
                draw_band_mask(rng, model.registry, rates[v]) if rates[v] > 0 else None
            )
            views[v].append(model.forward_view(ts, plan, band_mask))

    def pack(outs: list[ViewOutput]):
        scene = np.concatenate(
            [np.full(o.preds.shape[0], i, dtype=np.int64) for i, o in enumerate(outs)]
        )
        preds = (
            outs[0].preds
            if len(outs) == 1
            else ops.concat([o.preds for o in outs], axis=0)
        )
        return (
            preds,
            np.concatenate([o.targets for o in outs]),
            np.concatenate([o.modality_ids for o in outs]),
            scene,
            np.concatenate([o.decode_only for o in outs]),
            ops.concat([o.pooled for o in outs], axis=0)
            if len(outs) > 1
            else outs[0].pooled,
        )

    pa, ta, ma, sa, da, za = pack(views[0])
    pb, tb, mb, sb, db, zb = pack(views[1])
    return TwoViewBatch(
        preds_a=pa,
        targets_a=ta,
        modality_a=ma,
        scene_a=sa,
        decode_only_a=da,
        preds_b=pb,
        targets_b=tb,
        modality_b=mb,
        scene_b=sb,
        decode_only_b=db,
        pooled_a=za,
        pooled_b=zb,
        plans_a=[o.plan for o in views[0]],
        plans_b=[o.plan for o in views[1]],
    )
