"""Modality registry.

Raster modalities carry float bands over time; map modalities are static
single-channel class rasters that only ever appear as reconstruction
targets (decode_only). The v1 bandset partition groups bands that share a
ground sample distance; the single-bandset grouping keeps all bands of a
modality in one token.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class ModalitySpec:
    name: str
    kind: str  # "raster" | "map"
    bands: tuple[str, ...]
    temporal: bool
    bandsets_v1: dict[str, tuple[int, ...]] = field(default_factory=dict)
    num_classes: int = 0  # maps only
    decode_only: bool = False
    dropout_exempt: bool = False

    def __post_init__(self):
        if self.kind not in ("raster", "map"):
            raise ValueError(f"kind must be raster or map, got {self.kind!r}")
        if self.kind == "map":
            if self.num_classes < 2:
                raise ValueError(f"map {self.name} needs >= 2 classes")
            if not self.decode_only:
                raise ValueError(f"map {self.name} must be decode_only")
        covered = sorted(i for idxs in self.bandsets_v1.values() for i in idxs)
        if covered and covered != list(range(len(self.bands))):
            raise ValueError(
                f"{self.name}: v1 bandsets must partition bands 0..{len(self.bands) - 1}, "
                f"got {covered}"
            )

    @property
    def num_bands(self) -> int:
        return len(self.bands)

    def bandsets(self, grouping: str) -> dict[str, tuple[int, ...]]:
        """Band indices per bandset under "v1" or "single" grouping."""
        if grouping == "single":
            return {"all": tuple(range(self.num_bands))}
        if grouping == "v1":
            if self.bandsets_v1:
                return dict(self.bandsets_v1)
            return {"all": tuple(range(self.num_bands))}
        raise ValueError(f"unknown grouping {grouping!r}")


_S2_BANDS = (
    "B01", "B02", "B03", "B04", "B05", "B06",
    "B07", "B08", "B8A", "B09", "B11", "B12",
)
_S2_V1 = {
    "10m": (1, 2, 3, 7),
    "20m": (4, 5, 6, 8, 10, 11),
    "60m": (0, 9),
}

_LANDSAT_BANDS = ("L01", "L02", "L03", "L04", "L05", "L06", "L07", "L08", "L09", "L10", "L11")
_LANDSAT_V1 = {
    "30m": (0, 1, 2, 3, 4, 5, 6, 8),
    "15m": (7,),
    "100m": (9, 10),
}


def default_registry() -> dict[str, ModalitySpec]:
    """Sensors plus static map products used throughout the lab."""
    specs = [
        ModalitySpec("sentinel2", "raster", _S2_BANDS, temporal=True, bandsets_v1=_S2_V1),
        ModalitySpec(
            "landsat", "raster", _LANDSAT_BANDS, temporal=True, bandsets_v1=_LANDSAT_V1
        ),
        ModalitySpec(
            "sentinel1", "raster", ("VV", "VH"), temporal=True, dropout_exempt=True
        ),
        ModalitySpec(
            "worldcover", "map", ("class",), temporal=False, num_classes=8, decode_only=True
        ),
        ModalitySpec(
            "cropland", "map", ("class",), temporal=False, num_classes=8, decode_only=True
        ),
        ModalitySpec(
            "worldcereal", "map", ("class",), temporal=False, num_classes=2, decode_only=True
        ),
        ModalitySpec(
            "osm", "map", ("class",), temporal=False, num_classes=2, decode_only=True
        ),
        ModalitySpec(
            "elevation", "map", ("class",), temporal=False, num_classes=2, decode_only=True
        ),
        ModalitySpec(
            "canopy", "map", ("class",), temporal=False, num_classes=2, decode_only=True
        ),
    ]
    return {s.name: s for s in specs}
