"""City visual styles, deterministic in the style seed."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from urbandiff.seeding import rng_for

ROAD_PATTERNS = ("grid", "curvilinear", "radial", "organic")

# Roads are painted with this exact constant so constraint-raster pixels and
# image road pixels coincide bit-for-bit; roof palettes keep a channel spread
# wide enough that no shaded roof ever lands in the near-gray road band.
ROAD_RGB = (45, 45, 48)


@dataclass(frozen=True)
class CityStyle:
    """Rendering style for one city."""

    style_seed: int
    road_pattern: str
    roof_palette: tuple[tuple[int, int, int], ...]
    plot_scale_m: float
    vegetation_density: float
    terrain_roughness: float
    ground_tint: tuple[int, int, int]
    green_base: tuple[int, int, int]
    pop_per_res_m3: float

    def __post_init__(self) -> None:
        if self.road_pattern not in ROAD_PATTERNS:
            raise ValueError(f"unknown road pattern {self.road_pattern!r}")
        if not self.roof_palette:
            raise ValueError("roof palette must be non-empty")
        if self.plot_scale_m <= 0:
            raise ValueError("plot_scale_m must be positive")
        if not (0.0 <= self.vegetation_density <= 1.0):
            raise ValueError("vegetation_density must be in [0, 1]")


def _saturated_color(rng: np.random.Generator) -> tuple[int, int, int]:
    """A roof color with channel spread >= 60 (never mistaken for asphalt)."""
    high = int(rng.integers(150, 241))
    mid = int(rng.integers(60, 171))
    low = int(rng.integers(20, 91))
    channels = [high, mid, low]
    order = rng.permutation(3)
    out = [0, 0, 0]
    for i, ch in zip(order, channels):
        out[int(i)] = ch
    return tuple(out)


def sample_city_style(style_seed: int) -> CityStyle:
    rng = rng_for(style_seed, "city-style")
    pattern = ROAD_PATTERNS[int(rng.integers(0, len(ROAD_PATTERNS)))]
    palette = tuple(_saturated_color(rng) for _ in range(4))
    plot_scale = float(rng.uniform(60.0, 140.0))
    vegetation = float(rng.uniform(0.15, 0.85))
    roughness = float(rng.uniform(2.0, 22.0))
    # Ground dominates the pixel area, so the tint carries most of the city's
    # visual identity; channel floors keep it well clear of the road band.
    tint = (
        int(rng.integers(105, 206)),
        int(rng.integers(100, 196)),
        int(rng.integers(85, 176)),
    )
    red = int(rng.integers(30, 81))
    blue = int(rng.integers(30, 76))
    green = (red, int(rng.integers(max(red, blue) + 25, 141)), blue)
    pop_per_res_m3 = float(rng.uniform(0.008, 0.03))
    return CityStyle(
        style_seed=style_seed,
        road_pattern=pattern,
        roof_palette=palette,
        plot_scale_m=plot_scale,
        vegetation_density=vegetation,
        terrain_roughness=roughness,
        ground_tint=tint,
        green_base=green,
        pop_per_res_m3=pop_per_res_m3,
    )
