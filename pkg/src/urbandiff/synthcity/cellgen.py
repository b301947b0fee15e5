"""Procedural synthesis of one grid cell with exact ground-truth layers.

The generator works backwards from the targets: it decides exact pixel
counts first (built pixels, per-category land-use pixels, total floor-pixel
budget), then renders geometry to meet them, so recomputing metrics from the
written layers reproduces the stored values exactly, not approximately.
Rendering order is fixed (DEM, roads, zones, buildings, floors, image) and
every random draw comes from one derived generator, which makes the whole
record a pure function of (style, targets, cell_seed).

Roads are painted last with the constant ROAD_RGB color, so the constraint
raster and the image's road pixels coincide bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np
from scipy import ndimage

from urbandiff.errors import InfeasibleTargetsError
from urbandiff.geogrid import (
    DensityMetrics,
    Geometry,
    GridCell,
    LandUseMix,
    RasterLayer,
    compute_density_metrics,
    compute_land_use_mix,
    rasterize_constraints,
)
from urbandiff.geogrid.constraints import total_length_m
from urbandiff.geogrid.density import LAND_USE_CODES
from urbandiff.seeding import rng_for
from urbandiff.synthcity.styles import ROAD_RGB, CityStyle

_NONRES_ZONES = frozenset(
    {"commercial", "industrial", "public_facilities", "transportation", "other"}
)
_BUILT_ZONES = frozenset(
    {"residential", "commercial", "industrial", "public_facilities"}
)
FLOOR_HEIGHT_M = 3.0
_MAX_FLOORS = 40
_SLOPE_LIMIT = 0.35


class CellTargets(NamedTuple):
    metrics: DensityMetrics
    land_use: LandUseMix


@dataclass(frozen=True)
class CellRecord:
    """One synthesized cell: rasters, ground truth, and derived statistics."""

    cell: GridCell
    image: RasterLayer
    dem: RasterLayer
    constraint: RasterLayer
    gt_layers: Mapping[str, RasterLayer]
    metrics: DensityMetrics
    land_use: LandUseMix
    road_geoms: tuple[Geometry, ...] = ()


def validate_targets(targets: CellTargets) -> None:
    m = targets.metrics
    bcr = m.bcr if m.bcr is not None else 0.0
    bvd = m.bvd if m.bvd is not None else 0.0
    if bcr > 0.95:
        raise InfeasibleTargetsError(f"bcr {bcr} exceeds 0.95")
    if bcr == 0.0 and bvd > 0.0:
        raise InfeasibleTargetsError("bvd > 0 requires bcr > 0")
    if bcr > 0.0:
        mean_height = bvd / bcr
        if not (FLOOR_HEIGHT_M <= mean_height <= 60.0):
            raise InfeasibleTargetsError(
                f"implied mean height {mean_height:.2f} m outside [3, 60]"
            )


def synthesize_cell(
    style: CityStyle,
    targets: CellTargets,
    cell_seed: int,
    px: int = 64,
    cell: GridCell | None = None,
    road_width_px: float = 3.0,
) -> CellRecord:
    validate_targets(targets)
    if cell is None:
        cell = GridCell(cell_id=f"cell{cell_seed}", city_id=f"style{style.style_seed}")
    ps = cell.size_m / px
    rng = rng_for(cell_seed, "cell", style.style_seed)

    dem_values = _make_dem(rng, px, style.terrain_roughness)
    roads = _make_roads(rng, style, cell.size_m)
    constraint = rasterize_constraints(roads, cell, px, stroke_width_px=road_width_px)
    road_mask = constraint.values.astype(bool)
    zones = _zone_map(rng, px, style, targets.land_use)
    built_mask, building_ids, buildings = _place_buildings(
        rng, targets, px, ps, zones, road_mask, dem_values, cell.land_area_m2
    )
    floors_map = _assign_floors(
        rng, targets, px, ps, built_mask, building_ids, buildings, cell.land_area_m2
    )
    image_values = _compose_image(
        rng, style, px, zones, built_mask, building_ids, buildings, floors_map, road_mask
    )

    built_surface = (built_mask * (ps * ps)).astype(np.float32)
    built_volume = (floors_map * FLOOR_HEIGHT_M * ps * ps).astype(np.float32)
    nonres_mask = np.zeros((px, px), dtype=bool)
    for b in buildings:
        if b["category"] in _NONRES_ZONES:
            nonres_mask.flat[b["pixels"]] = True
    nonres_surface = (built_surface * nonres_mask).astype(np.float32)
    nonres_volume = (built_volume * nonres_mask).astype(np.float32)
    population = ((built_volume - nonres_volume) * style.pop_per_res_m3).astype(np.float32)

    gt_layers = {
        "built_surface": RasterLayer("built_surface", built_surface, ps),
        "built_volume": RasterLayer("built_volume", built_volume, ps),
        "nonres_surface": RasterLayer("nonres_surface", nonres_surface, ps),
        "nonres_volume": RasterLayer("nonres_volume", nonres_volume, ps),
        "population": RasterLayer("population", population, ps),
        "landuse": RasterLayer("landuse", zones, ps),
    }
    road_density = total_length_m(roads, "road") / cell.land_area_m2 * 1000.0
    metrics = compute_density_metrics(gt_layers, cell, road_density=road_density)
    land_use = compute_land_use_mix(gt_layers["landuse"], cell)

    return CellRecord(
        cell=cell,
        image=RasterLayer("image", image_values, ps),
        dem=RasterLayer("dem", dem_values, ps),
        constraint=constraint,
        gt_layers=gt_layers,
        metrics=metrics,
        land_use=land_use,
        road_geoms=tuple(roads),
    )


def _make_dem(rng: np.random.Generator, px: int, roughness: float) -> np.ndarray:
    base = max(5, px // 8)
    coarse = rng.normal(size=(base, base))
    z = ndimage.zoom(coarse, (px / base, px / base), order=3, mode="nearest")
    z = (z - z.mean()) / (z.std() + 1e-9) * (roughness / 2.0)
    yy, xx = np.mgrid[0:px, 0:px] / px
    tilt = rng.uniform(-0.4, 0.4, size=2)
    z = z + roughness * (tilt[0] * xx + tilt[1] * yy) + rng.uniform(5.0, 60.0)
    return z.astype(np.float32)


def _make_roads(rng: np.random.Generator, style: CityStyle, size_m: float) -> list[Geometry]:
    spacing = float(np.clip(style.plot_scale_m * 1.6, 60.0, 200.0))
    pattern = style.road_pattern
    roads: list[Geometry] = []

    def clamp(p):
        return (float(np.clip(p[0], 0.0, size_m)), float(np.clip(p[1], 0.0, size_m)))

    if pattern == "grid":
        offset = rng.uniform(0, spacing, size=2)
        for x in np.arange(offset[0], size_m, spacing):
            if rng.random() < 0.12:
                continue
            roads.append(Geometry("road", [(x, 0.0), (x, size_m)]))
        for y in np.arange(offset[1], size_m, spacing):
            if rng.random() < 0.12:
                continue
            roads.append(Geometry("road", [(0.0, y), (size_m, y)]))
    elif pattern == "curvilinear":
        n = max(2, int(size_m / spacing))
        for i in range(n):
            y0 = (i + 0.5) * size_m / n + rng.uniform(-0.2, 0.2) * spacing
            amp = rng.uniform(0.2, 0.55) * spacing
            wavelength = rng.uniform(0.8, 1.6) * size_m
            phase = rng.uniform(0, 2 * np.pi)
            xs = np.linspace(0.0, size_m, 17)
            pts = [clamp((x, y0 + amp * np.sin(2 * np.pi * x / wavelength + phase))) for x in xs]
            roads.append(Geometry("road", pts))
        for _ in range(2):
            x = rng.uniform(0.15, 0.85) * size_m
            roads.append(Geometry("road", [(x, 0.0), (x, size_m)]))
    elif pattern == "radial":
        cx, cy = (size_m / 2 + rng.uniform(-0.1, 0.1) * size_m for _ in range(2))
        n_spokes = int(rng.integers(5, 9))
        base_angle = rng.uniform(0, 2 * np.pi)
        for k in range(n_spokes):
            ang = base_angle + 2 * np.pi * k / n_spokes + rng.uniform(-0.1, 0.1)
            far = (cx + np.cos(ang) * size_m, cy + np.sin(ang) * size_m)
            roads.append(Geometry("road", [clamp((cx, cy)), clamp(far)]))
        for radius in np.arange(spacing, size_m * 0.75, spacing * 1.3):
            angles = np.linspace(0, 2 * np.pi, 25)
            pts = [clamp((cx + radius * np.cos(a), cy + radius * np.sin(a))) for a in angles]
            roads.append(Geometry("road", pts))
    else:  # organic
        n_walks = int(rng.integers(6, 11))
        for _ in range(n_walks):
            p = rng.uniform(0, size_m, size=2)
            heading = rng.uniform(0, 2 * np.pi)
            pts = [clamp(p)]
            for _ in range(int(rng.integers(4, 9))):
                heading += rng.uniform(-0.7, 0.7)
                step = rng.uniform(0.6, 1.4) * spacing
                p = p + step * np.array([np.cos(heading), np.sin(heading)])
                pts.append(clamp(p))
            roads.append(Geometry("road", pts))
    return roads


def _zone_map(
    rng: np.random.Generator, px: int, style: CityStyle, target: LandUseMix
) -> np.ndarray:
    """Land-use codes with exact per-category pixel counts.

    Pixels are ordered by serpentine blocks at roughly plot scale and assigned
    in contiguous runs, so categories come out as coherent districts while the
    pixel counts hit the largest-remainder apportionment of the targets.
    """
    n = px * px
    ratios = dict(target.ratios)
    shortfall = 1.0 - sum(ratios.values())
    if shortfall > 1e-9:
        fill = "nature_reserve" if style.vegetation_density >= 0.5 else "other"
        ratios[fill] = ratios.get(fill, 0.0) + shortfall

    cats = [c for c in ratios if ratios[c] > 0]
    cats = [cats[i] for i in rng.permutation(len(cats))]
    quotas = np.array([ratios[c] * n for c in cats])
    counts = np.floor(quotas).astype(int)
    for i in np.argsort(-(quotas - np.floor(quotas)))[: n - counts.sum()]:
        counts[i] += 1

    block = int(np.clip(round(style.plot_scale_m / (400.0 / px)), 4, max(4, px // 2)))
    order = _serpentine_pixel_order(rng, px, block)
    codes = np.empty(n, dtype=np.uint8)
    start = 0
    for cat, count in zip(cats, counts):
        codes[order[start : start + count]] = LAND_USE_CODES[cat]
        start += count
    return codes.reshape(px, px)


def _serpentine_pixel_order(rng: np.random.Generator, px: int, block: int) -> np.ndarray:
    n_blocks = (px + block - 1) // block
    flat = np.arange(px * px).reshape(px, px)
    if rng.random() < 0.5:
        flat = flat.T
    chunks = []
    for bi in range(n_blocks):
        row_blocks = []
        for bj in range(n_blocks):
            row_blocks.append(
                flat[bi * block : (bi + 1) * block, bj * block : (bj + 1) * block].ravel()
            )
        if bi % 2 == 1:
            row_blocks.reverse()
        chunks.extend(row_blocks)
    order = np.concatenate(chunks)
    if rng.random() < 0.5:
        order = order[::-1]
    return order


def _place_buildings(
    rng: np.random.Generator,
    targets: CellTargets,
    px: int,
    ps: float,
    zones: np.ndarray,
    road_mask: np.ndarray,
    dem: np.ndarray,
    land_area: float,
):
    bcr = targets.metrics.bcr or 0.0
    n_target = int(round(bcr * px * px))
    built = np.zeros((px, px), dtype=bool)
    ids = np.full((px, px), -1, dtype=np.int32)
    buildings: list[dict] = []
    if n_target == 0:
        return built, ids, buildings

    gy, gx = np.gradient(dem.astype(np.float64), ps)
    gentle = np.hypot(gx, gy) <= _SLOPE_LIMIT
    built_zone = np.isin(zones, [LAND_USE_CODES[z] for z in _BUILT_ZONES])
    pools = [
        built_zone & ~road_mask & gentle,
        built_zone & ~road_mask,
        ~road_mask,
        np.ones((px, px), dtype=bool),
    ]

    plot_px = max(3, int(round(targets_plot_px(px))))
    lo = max(2, plot_px // 4)
    hi = max(lo + 1, (3 * plot_px) // 4)

    placed = 0
    pool_idx = 0
    code_to_name = {code: name for name, code in LAND_USE_CODES.items()}
    while placed < n_target:
        pool = pools[pool_idx] & ~built
        candidates = np.flatnonzero(pool)
        if candidates.size == 0:
            pool_idx += 1
            if pool_idx >= len(pools):
                raise InfeasibleTargetsError("building pixel budget exceeds cell capacity")
            continue
        anchor = int(candidates[rng.integers(0, candidates.size)])
        r0, c0 = divmod(anchor, px)
        h = int(rng.integers(lo, hi + 1))
        w = int(rng.integers(lo, hi + 1))
        r1, c1 = min(r0 + h, px), min(c0 + w, px)
        rect = np.zeros((px, px), dtype=bool)
        rect[r0:r1, c0:c1] = True
        new = np.flatnonzero(rect & pool)  # contains at least the anchor
        remaining = n_target - placed
        if new.size > remaining:
            new = new[:remaining]
        b_id = len(buildings)
        built.flat[new] = True
        ids.flat[new] = b_id
        buildings.append(
            {
                "pixels": new,
                "category": code_to_name.get(int(zones.flat[anchor]), "other"),
            }
        )
        placed += new.size
    return built, ids, buildings


def targets_plot_px(px: int) -> float:
    # Building scale relative to the raster: ~1/10 of the cell side.
    return px / 10.0


def _assign_floors(
    rng: np.random.Generator,
    targets: CellTargets,
    px: int,
    ps: float,
    built_mask: np.ndarray,
    building_ids: np.ndarray,
    buildings: list[dict],
    land_area: float,
) -> np.ndarray:
    floors = np.zeros((px, px), dtype=np.int32)
    bvd = targets.metrics.bvd or 0.0
    f_target = int(round(bvd * land_area / (FLOOR_HEIGHT_M * ps * ps)))
    if not buildings:
        if f_target > 0:
            raise InfeasibleTargetsError("volume requested without any buildings")
        return floors
    n_built = int(built_mask.sum())
    f_target = max(f_target, n_built)  # every building stands at least one floor
    mean_floors = f_target / n_built

    per_building = []
    for b in buildings:
        f = int(np.clip(round(mean_floors * rng.lognormal(0.0, 0.45)), 1, _MAX_FLOORS))
        per_building.append(f)
        floors.flat[b["pixels"]] = f

    diff = f_target - int(floors.sum())
    sizes = np.array([b["pixels"].size for b in buildings])
    # Whole-building adjustments while a building fits in the remaining diff.
    guard = 0
    while diff != 0 and guard < 10_000:
        guard += 1
        direction = 1 if diff > 0 else -1
        adjustable = [
            i
            for i in range(len(buildings))
            if sizes[i] <= abs(diff)
            and 1 <= per_building[i] + direction <= _MAX_FLOORS
        ]
        if not adjustable:
            break
        i = adjustable[int(rng.integers(0, len(adjustable)))]
        per_building[i] += direction
        floors.flat[buildings[i]["pixels"]] += direction
        diff -= direction * sizes[i]
    # Pixel-level residue: adjust single pixels by one floor per pass.
    flat = floors.ravel()
    while diff != 0:
        direction = 1 if diff > 0 else -1
        candidates = np.flatnonzero(
            built_mask.ravel()
            & (flat + direction >= 1)
            & (flat + direction <= _MAX_FLOORS)
        )
        if candidates.size == 0:
            raise InfeasibleTargetsError("could not meet volume budget within floor limits")
        take = candidates[: min(abs(diff), candidates.size)]
        flat[take] += direction
        diff -= direction * take.size
    return floors


def _compose_image(
    rng: np.random.Generator,
    style: CityStyle,
    px: int,
    zones: np.ndarray,
    built_mask: np.ndarray,
    building_ids: np.ndarray,
    buildings: list[dict],
    floors_map: np.ndarray,
    road_mask: np.ndarray,
) -> np.ndarray:
    img = np.empty((px, px, 3), dtype=np.float32)
    tint = np.array(style.ground_tint, dtype=np.float32)
    img[:] = tint * 0.96
    green_zone = np.isin(zones, [LAND_USE_CODES["park"], LAND_USE_CODES["nature_reserve"]])
    img[green_zone] = 0.4 * tint + 0.6 * np.array([70.0, 105.0, 60.0])
    transport = zones == LAND_USE_CODES["transportation"]
    img[transport] = np.array([110.0, 102.0, 88.0])
    img += rng.uniform(-9.0, 9.0, size=(px, px, 1)).astype(np.float32)

    veg_rate = np.where(green_zone, 0.9, 0.25) * style.vegetation_density
    speckle = rng.random((px, px)) < veg_rate
    n_speck = int(speckle.sum())
    green = np.array(style.green_base, dtype=np.float32)
    # Scalar brightness jitter keeps the channel spread, so vegetation can
    # never drift into the near-gray road band.
    greens = green[None, :] * rng.uniform(0.85, 1.15, size=(n_speck, 1)).astype(np.float32)
    img[speckle] = np.clip(greens, 0, 255)

    palette = np.array(style.roof_palette, dtype=np.float32)
    shade = 1.0 - 0.4 * np.minimum(floors_map, 20) / 20.0
    for b_id, b in enumerate(buildings):
        color = palette[int(rng.integers(0, len(palette)))]
        jitter = rng.uniform(-12, 12, size=3).astype(np.float32)
        pix = b["pixels"]
        rows, cols = np.divmod(pix, px)
        img[rows, cols] = (color + jitter)[None, :] * shade[rows, cols, None]

    img = np.clip(img, 0, 255)
    out = img.astype(np.uint8)
    out[road_mask] = np.array(ROAD_RGB, dtype=np.uint8)
    return out
