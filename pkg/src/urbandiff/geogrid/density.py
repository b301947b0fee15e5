"""Density metrics and land-use statistics over ground-truth raster layers.

Layer semantics: built_surface / nonres_surface hold m² per pixel,
built_volume / nonres_volume hold m³ per pixel, population holds persons per
pixel. Metrics divide aggregate sums by the cell's land area:

    bcr = Σ built_surface / land_area                (fraction of land built)
    bvd = Σ built_volume / land_area                 (m³ per m² of land)
    rpd = Σ population / Σ(built_surface − nonres_surface)   (persons / m²)
    rvc = Σ(built_volume − nonres_volume) / Σ population     (m³ / person)

rpd is undefined (None) when the residential surface is zero, rvc when the
population is zero. If non-residential totals exceed built totals the
residential difference clamps to zero and the metrics carry a quality flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from urbandiff.errors import AlignmentError, UrbanDiffError
from urbandiff.geogrid.cells import GridCell
from urbandiff.geogrid.rasters import RasterLayer

LAND_USE_CATEGORIES = (
    "residential",
    "commercial",
    "industrial",
    "public_facilities",
    "transportation",
    "park",
    "nature_reserve",
    "other",
)
LAND_USE_CODES = {name: code for code, name in enumerate(LAND_USE_CATEGORIES)}
LANDUSE_NODATA_CODE = 255

_METRIC_LAYER_KINDS = (
    "population",
    "built_surface",
    "built_volume",
    "nonres_surface",
    "nonres_volume",
)


@dataclass(frozen=True)
class DensityMetrics:
    """Aggregate density metrics for one cell.

    None means absent or undefined: compute_density_metrics always fills bcr
    and bvd, but prompt specs may carry any subset.
    """

    bcr: float | None = None
    bvd: float | None = None
    rpd: float | None = None
    rvc: float | None = None
    road_density: float | None = None
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.bcr is not None and not (0.0 <= self.bcr <= 1.0):
            raise ValueError(f"bcr must be in [0, 1], got {self.bcr}")
        for name in ("bvd", "rpd", "rvc", "road_density"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be nonnegative or None, got {v}")

    def to_dict(self) -> dict:
        return {
            "bcr": self.bcr,
            "bvd": self.bvd,
            "rpd": self.rpd,
            "rvc": self.rvc,
            "road_density": self.road_density,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "DensityMetrics":
        def opt(name: str) -> float | None:
            v = data.get(name)
            return None if v is None else float(v)

        return cls(
            bcr=opt("bcr"),
            bvd=opt("bvd"),
            rpd=opt("rpd"),
            rvc=opt("rvc"),
            road_density=opt("road_density"),
            flags=tuple(data.get("flags", ())),
        )


@dataclass(frozen=True)
class LandUseMix:
    """Fractions of cell area per land-use category."""

    ratios: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        total = 0.0
        for name, ratio in self.ratios.items():
            if name not in LAND_USE_CATEGORIES:
                raise ValueError(f"unknown land-use category {name!r}")
            if not (0.0 <= ratio <= 1.0):
                raise ValueError(f"ratio for {name} out of [0, 1]: {ratio}")
            total += ratio
        if total > 1.0 + 1e-9:
            raise ValueError(f"land-use ratios sum to {total} > 1")
        object.__setattr__(self, "ratios", dict(self.ratios))

    def get(self, category: str) -> float:
        return float(self.ratios.get(category, 0.0))

    def to_dict(self) -> dict:
        return {k: self.ratios[k] for k in LAND_USE_CATEGORIES if k in self.ratios}

    @classmethod
    def from_dict(cls, data: Mapping) -> "LandUseMix":
        return cls(ratios={k: float(v) for k, v in data.items()})


def _layer_sum(layer: RasterLayer) -> float:
    mask = layer.data_mask()
    return float(np.sum(layer.values.astype(np.float64), where=mask))


def _check_alignment(layers: Mapping[str, RasterLayer], cell: GridCell) -> None:
    shapes = {(l.height, l.width) for l in layers.values()}
    pixel_sizes = {float(l.pixel_size_m) for l in layers.values()}
    if len(shapes) != 1 or len(pixel_sizes) != 1:
        raise AlignmentError(
            f"layers disagree on grid: shapes={sorted(shapes)} pixel_sizes={sorted(pixel_sizes)}"
        )
    (h, w), ps = shapes.pop(), pixel_sizes.pop()
    if abs(w * ps - cell.size_m) > 1e-6 * cell.size_m or abs(h * ps - cell.size_m) > 1e-6 * cell.size_m:
        raise AlignmentError(
            f"layer coverage {w}x{h} px at {ps} m/px does not span the {cell.size_m} m cell"
        )


def compute_density_metrics(
    layers: Iterable[RasterLayer] | Mapping[str, RasterLayer],
    cell: GridCell,
    road_density: float | None = None,
) -> DensityMetrics:
    """Compute DensityMetrics from ground-truth layers for one cell.

    Accepts the five metric layer kinds (extra kinds are ignored). road_density
    is passed through when the caller knows the vector road network; rasters
    alone cannot supply it.
    """
    if not isinstance(layers, Mapping):
        layers = {layer.kind: layer for layer in layers}
    missing = [k for k in _METRIC_LAYER_KINDS if k not in layers]
    if missing:
        raise UrbanDiffError(f"missing metric layers: {missing}")
    metric_layers = {k: layers[k].validate() for k in _METRIC_LAYER_KINDS}
    _check_alignment(metric_layers, cell)

    land_area = cell.land_area_m2
    built_surface = _layer_sum(metric_layers["built_surface"])
    built_volume = _layer_sum(metric_layers["built_volume"])
    nonres_surface = _layer_sum(metric_layers["nonres_surface"])
    nonres_volume = _layer_sum(metric_layers["nonres_volume"])
    population = _layer_sum(metric_layers["population"])

    flags: list[str] = []
    res_surface = built_surface - nonres_surface
    res_volume = built_volume - nonres_volume
    if res_surface < 0:
        res_surface = 0.0
        flags.append("residential_surface_clamped")
    if res_volume < 0:
        res_volume = 0.0
        flags.append("residential_volume_clamped")

    bcr = built_surface / land_area
    bvd = built_volume / land_area
    rpd = None if res_surface == 0 else population / res_surface
    rvc = None if population == 0 else res_volume / population
    return DensityMetrics(
        bcr=bcr,
        bvd=bvd,
        rpd=rpd,
        rvc=rvc,
        road_density=road_density,
        flags=tuple(flags),
    )


def compute_land_use_mix(landuse_raster: RasterLayer, cell: GridCell) -> LandUseMix:
    """Per-category pixel fractions over the non-nodata area of the cell."""
    landuse_raster.validate()
    if landuse_raster.kind != "landuse":
        raise UrbanDiffError(f"expected a landuse raster, got {landuse_raster.kind}")
    _check_alignment({"landuse": landuse_raster}, cell)
    codes = landuse_raster.values
    valid = codes != LANDUSE_NODATA_CODE
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise UrbanDiffError("landuse raster is entirely nodata")
    counts = np.bincount(codes[valid].ravel(), minlength=256)
    ratios = {}
    other_code = LAND_USE_CODES["other"]
    for code, count in enumerate(counts):
        if count == 0 or code == LANDUSE_NODATA_CODE:
            continue
        name = (
            LAND_USE_CATEGORIES[code]
            if code < len(LAND_USE_CATEGORIES)
            else LAND_USE_CATEGORIES[other_code]
        )
        ratios[name] = ratios.get(name, 0.0) + float(count) / n_valid
    return LandUseMix(ratios=ratios)
