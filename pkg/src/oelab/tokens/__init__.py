from oelab.tokens.grid import (
    TokenGroup,
    TokenSet,
    bandset_index,
    count_tokens,
    count_tokens_by_modality,
    patchify_scene,
    unpatchify_raster,
)
from oelab.tokens.dropout import apply_band_dropout, draw_band_mask, draw_dropout_rate
from oelab.tokens.projection import PatchEmbed, TargetProjector
from oelab.tokens.conv_equiv import (
    conv_patch_embed,
    conv_weight_to_linear,
    linear_patch_embed,
)

__all__ = [
    "TokenGroup",
    "TokenSet",
    "patchify_scene",
    "unpatchify_raster",
    "count_tokens",
    "count_tokens_by_modality",
    "bandset_index",
    "apply_band_dropout",
    "draw_band_mask",
    "draw_dropout_rate",
    "PatchEmbed",
    "TargetProjector",
    "conv_patch_embed",
    "conv_weight_to_linear",
    "linear_patch_embed",
]
