"""Multiply-accumulate accounting.

Only matmul-family contractions count (an [m, k] x [k, n] product is
m*k*n MACs); normalizations, activations, additions, and gathers are free.
The closed-form formulas here must match the instrumented counter to the
integer: any drift means the model changed shape behind the bookkeeping.

Per encoder block on N tokens of width D with an MLP of width R*D:
  attention projections  4 N D^2   (q, k, v, out)
  attention products     2 N^2 D   (scores and context, summed over heads)
  mlp                    2 N D (R D)
The patch embed adds sum_g N_g * d_in_g * D over encodable groups. The
decoder is tracked separately and never enters the encoder ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

from oelab.autodiff import mac_counting
from oelab.data.modalities import ModalitySpec
from oelab.masking import MaskPlan
from oelab.model import Model, ModelConfig
from oelab.tokens.grid import TokenSet, count_tokens


@dataclass(frozen=True)
class MacsReport:
    embed: int
    encoder: int
    total: int

    @property
    def per_token_profile(self) -> dict:
        return {"embed": self.embed, "encoder": self.encoder, "total": self.total}


def _group_dims(
    registry: dict[str, ModalitySpec],
    grouping: str,
    patch: int,
    height: int,
    width: int,
    timesteps: int,
    modalities: list[str] | None,
) -> list[tuple[int, int]]:
    """(tokens, input_dim) per encodable group."""
    cells = (height // patch) * (width // patch)
    names = modalities if modalities is not None else list(registry)
    out = []
    for name in names:
        spec = registry[name]
        if spec.decode_only:
            continue
        t_m = timesteps if spec.temporal else 1
        for band_idx in spec.bandsets(grouping).values():
            out.append((t_m * cells, patch * patch * len(band_idx)))
    return out


def analytic_block_macs(n: int, dim: int, mlp_ratio: int) -> int:
    return 4 * n * dim * dim + 2 * n * n * dim + 2 * n * dim * (mlp_ratio * dim)


def analytic_encode_macs(
    cfg: ModelConfig,
    registry: dict[str, ModalitySpec],
    height: int,
    width: int,
    timesteps: int,
    modalities: list[str] | None = None,
) -> MacsReport:
    """Closed-form probe-path cost: every sensor token encoded."""
    groups = _group_dims(
        registry, cfg.grouping, cfg.patch, height, width, timesteps, modalities
    )
    embed = sum(n_g * d_in * cfg.dim for n_g, d_in in groups)
    n = sum(n_g for n_g, _ in groups)
    encoder = cfg.enc_blocks * analytic_block_macs(n, cfg.dim, cfg.mlp_ratio)
    return MacsReport(embed=embed, encoder=encoder, total=embed + encoder)


def analytic_decoder_macs(cfg: ModelConfig, n_visible: int, n_target: int) -> int:
    proj = n_visible * cfg.dim * cfg.dec_dim
    n = n_visible + n_target
    blocks = cfg.dec_blocks * analytic_block_macs(n, cfg.dec_dim, cfg.mlp_ratio)
    head = n_target * cfg.dec_dim * cfg.dim
    return proj + blocks + head


def measured_encode_macs(model: Model, token_set: TokenSet) -> int:
    with mac_counting() as counter:
        model.encode_all(token_set)
    return counter.total


def measured_decode_macs(model: Model, token_set: TokenSet, plan: MaskPlan) -> int:
    enc = model.encode(token_set, plan.visible_idx)
    with mac_counting() as counter:
        model.decode(enc, token_set, plan.target_idx)
    return counter.total


def tokenization_macs_ratio(
    cfg: ModelConfig,
    registry: dict[str, ModalitySpec],
    height: int = 32,
    width: int = 32,
    timesteps: int = 4,
    modalities: list[str] | None = None,
) -> dict:
    """Encoder cost of per-GSD bandset tokens over single-bandset tokens."""
    import dataclasses

    multi = analytic_encode_macs(
        dataclasses.replace(cfg, grouping="v1"),
        registry,
        height,
        width,
        timesteps,
        modalities,
    )
    single = analytic_encode_macs(
        dataclasses.replace(cfg, grouping="single"),
        registry,
        height,
        width,
        timesteps,
        modalities,
    )
    enc_names = [
        n for n in (modalities if modalities is not None else list(registry))
        if not registry[n].decode_only
    ]
    return {
        "multi_total": multi.total,
        "single_total": single.total,
        "ratio": multi.total / single.total,
        "multi_tokens": count_tokens(
            registry, "v1", height, width, timesteps, cfg.patch, enc_names
        ),
        "single_tokens": count_tokens(
            registry, "single", height, width, timesteps, cfg.patch, enc_names
        ),
    }
