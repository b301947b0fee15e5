"""Corpus builder: many styled cities, exact ground truth, one manifest."""

from __future__ import annotations

import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from urbandiff.errors import ConfigError
from urbandiff.geogrid import (
    DensityMetrics,
    GridCell,
    LandUseMix,
    PromptSpec,
    assign_splits,
    raster_path_for,
    render_prompt,
    save_raster,
)
from urbandiff.geogrid.density import LAND_USE_CATEGORIES
from urbandiff.geogrid.manifest import (
    CorpusManifest,
    ManifestRecord,
    write_manifest,
)
from urbandiff.seeding import derive_seed, rng_for
from urbandiff.synthcity.cellgen import CellRecord, CellTargets, synthesize_cell
from urbandiff.synthcity.styles import CityStyle, sample_city_style

CITY_NAMES = (
    "Arvendale", "Brickmoor", "Calverra", "Dunmarsh", "Eastvale", "Ferrona",
    "Gildport", "Harrowby", "Ironvale", "Juniper Flats", "Kestrel Bay", "Lorwick",
    "Marcellon", "Northgate", "Ostrava Nova", "Pellworth", "Quarryville", "Rosford",
    "Saltmere", "Tarrant Cross", "Umberfield", "Vantara", "Westhollow", "Xanfield",
    "Yarrowton", "Zephyr Hills",
)

_DIRICHLET_BASE = {
    "residential": 3.0,
    "commercial": 1.2,
    "industrial": 1.0,
    "public_facilities": 0.6,
    "transportation": 0.5,
    "park": 1.0,
    "nature_reserve": 1.0,
    "other": 0.4,
}


@dataclass(frozen=True)
class CorpusConfig:
    n_cities: int = 6
    cells_per_city: int = 400
    image_px: int = 64
    cell_size_m: float = 400.0
    global_seed: int = 0
    bcr_range: tuple[float, float] = (0.05, 0.6)
    mean_height_range_m: tuple[float, float] = (4.5, 40.0)
    empty_fraction: float = 0.04
    road_width_px: float = 3.0

    def __post_init__(self) -> None:
        if self.n_cities <= 0 or self.cells_per_city <= 0:
            raise ConfigError("n_cities and cells_per_city must be positive", "corpus.n_cities")
        if self.image_px < 16:
            raise ConfigError("image_px must be at least 16", "corpus.image_px")
        lo, hi = self.bcr_range
        if not (0.0 <= lo <= hi <= 0.95):
            raise ConfigError("bcr_range must lie within [0, 0.95]", "corpus.bcr_range")
        lo_h, hi_h = self.mean_height_range_m
        if not (3.0 <= lo_h <= hi_h <= 60.0):
            raise ConfigError("mean_height_range_m must lie within [3, 60]", "corpus.mean_height_range_m")
        if not (0.0 <= self.empty_fraction <= 0.5):
            raise ConfigError("empty_fraction must be in [0, 0.5]", "corpus.empty_fraction")

    def to_dict(self) -> dict:
        return {
            "n_cities": self.n_cities,
            "cells_per_city": self.cells_per_city,
            "image_px": self.image_px,
            "cell_size_m": self.cell_size_m,
            "global_seed": self.global_seed,
            "bcr_range": list(self.bcr_range),
            "mean_height_range_m": list(self.mean_height_range_m),
            "empty_fraction": self.empty_fraction,
            "road_width_px": self.road_width_px,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CorpusConfig":
        kwargs = dict(data)
        for key in ("bcr_range", "mean_height_range_m"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad corpus config: {exc}", "corpus") from exc


def city_name_for(index: int) -> str:
    return CITY_NAMES[index] if index < len(CITY_NAMES) else f"City {index}"


def sample_cell_targets(
    config: CorpusConfig, city_index: int, cell_index: int, style: CityStyle
) -> CellTargets:
    """Per-cell density and land-use targets, deterministic in config+indices."""
    rng = rng_for(config.global_seed, "targets", city_index, cell_index)
    city_rng = rng_for(config.global_seed, "city-landuse", city_index)
    alphas = np.array(
        [_DIRICHLET_BASE[c] for c in LAND_USE_CATEGORIES]
    ) * city_rng.lognormal(0.0, 0.55, size=len(LAND_USE_CATEGORIES))

    if rng.random() < config.empty_fraction:
        metrics = DensityMetrics(bcr=0.0, bvd=0.0)
    else:
        bcr = float(rng.uniform(*config.bcr_range))
        mean_h = float(rng.uniform(*config.mean_height_range_m))
        metrics = DensityMetrics(bcr=bcr, bvd=bcr * mean_h)
    raw = rng.dirichlet(alphas)
    ratios = {c: float(v) for c, v in zip(LAND_USE_CATEGORIES, raw) if v > 1e-4}
    total = sum(ratios.values())
    if total > 1.0:
        ratios = {c: v / total for c, v in ratios.items()}
    return CellTargets(metrics=metrics, land_use=LandUseMix(ratios=ratios))


def prompt_for_record(record: CellRecord, city_name: str) -> str:
    metrics = DensityMetrics(
        bcr=record.metrics.bcr,
        bvd=record.metrics.bvd,
        road_density=record.metrics.road_density,
    )
    visible = {c: r for c, r in record.land_use.ratios.items() if r >= 0.01}
    land_use = LandUseMix(ratios=visible) if visible else None
    return render_prompt(PromptSpec(city_name=city_name, metrics=metrics, land_use=land_use))


def save_cell_record(record: CellRecord, cells_dir: Path, rel_prefix: str) -> dict[str, str]:
    """Write all rasters of a record; returns kind -> manifest-relative path."""
    paths: dict[str, str] = {}
    for kind, layer in (
        ("image", record.image),
        ("dem", record.dem),
        ("constraint", record.constraint),
        *record.gt_layers.items(),
    ):
        p = raster_path_for(cells_dir, record.cell.cell_id, kind)
        save_raster(layer, p)
        paths[kind] = f"{rel_prefix}/{p.name}"
    return paths


def build_corpus(config: CorpusConfig, out_dir: str | Path, overwrite: bool = False) -> CorpusManifest:
    """Build the full corpus into out_dir and write its manifest.

    The corpus is assembled in a sibling `.partial` directory and renamed on
    success, so a failed build leaves no half-written corpus behind.
    """
    out_dir = Path(out_dir)
    if out_dir.exists():
        if not overwrite:
            raise ConfigError(f"corpus directory already exists: {out_dir}", "corpus.out_dir")
        shutil.rmtree(out_dir)
    partial = out_dir.parent / (out_dir.name + ".partial")
    if partial.exists():
        shutil.rmtree(partial)
    cells_dir = partial / "cells"
    cells_dir.mkdir(parents=True)

    try:
        cells: list[GridCell] = []
        for ci in range(config.n_cities):
            for i in range(config.cells_per_city):
                cells.append(
                    GridCell(
                        cell_id=f"c{ci}_{i:04d}",
                        city_id=f"c{ci}",
                        origin=((i % 20) * config.cell_size_m, (i // 20) * config.cell_size_m),
                        size_m=config.cell_size_m,
                    )
                )
        cells = assign_splits(cells, config.global_seed)
        cell_lookup = {c.cell_id: c for c in cells}

        records: list[ManifestRecord] = []
        for ci in range(config.n_cities):
            style = sample_city_style(derive_seed(config.global_seed, "style", ci))
            name = city_name_for(ci)
            for i in range(config.cells_per_city):
                cell = cell_lookup[f"c{ci}_{i:04d}"]
                targets = sample_cell_targets(config, ci, i, style)
                record = synthesize_cell(
                    style,
                    targets,
                    cell_seed=derive_seed(config.global_seed, "cell-seed", ci, i),
                    px=config.image_px,
                    cell=cell,
                    road_width_px=config.road_width_px,
                )
                paths = save_cell_record(record, cells_dir, "cells")
                records.append(
                    ManifestRecord(
                        cell=cell,
                        image_path=paths["image"],
                        dem_path=paths["dem"],
                        constraint_path=paths["constraint"],
                        gt_layer_paths={k: paths[k] for k in record.gt_layers},
                        metrics=record.metrics,
                        land_use=record.land_use,
                        prompt=prompt_for_record(record, name),
                    )
                )
        manifest = write_manifest(records, partial / "manifest.jsonl")
    except BaseException:
        shutil.rmtree(partial, ignore_errors=True)
        raise
    partial.rename(out_dir)
    return CorpusManifest(records=manifest.records, corpus_hash=manifest.corpus_hash, root=out_dir)
