"""Corpus manifests: JSON-lines records plus a content digest.

A manifest line holds one cell record: the grid cell, relative paths to its
rasters, metrics, land-use mix, and the rendered prompt. The corpus hash
digests record content including referenced raster bytes and is invariant to
record order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from urbandiff.errors import ManifestError
from urbandiff.geogrid.cells import GridCell, assign_splits
from urbandiff.geogrid.density import DensityMetrics, LandUseMix, compute_density_metrics, compute_land_use_mix
from urbandiff.geogrid.prompts import PromptSpec, render_prompt
from urbandiff.geogrid.rasters import (
    CONTINUOUS_KINDS,
    RASTER_KINDS,
    load_raster,
)

GT_LAYER_KINDS = (
    "built_surface",
    "built_volume",
    "nonres_surface",
    "nonres_volume",
    "population",
    "landuse",
)


@dataclass(frozen=True)
class ManifestRecord:
    """One corpus cell: grid metadata, raster paths, metrics, prompt."""

    cell: GridCell
    image_path: str
    dem_path: str
    constraint_path: str
    gt_layer_paths: Mapping[str, str]
    metrics: DensityMetrics
    land_use: LandUseMix
    prompt: str

    def all_paths(self) -> list[str]:
        return [
            self.image_path,
            self.dem_path,
            self.constraint_path,
            *[self.gt_layer_paths[k] for k in sorted(self.gt_layer_paths)],
        ]

    def to_json_dict(self) -> dict:
        return {
            "cell": {
                "cell_id": self.cell.cell_id,
                "city_id": self.cell.city_id,
                "origin": list(self.cell.origin),
                "size_m": self.cell.size_m,
                "split": self.cell.split,
            },
            "image_path": self.image_path,
            "dem_path": self.dem_path,
            "constraint_path": self.constraint_path,
            "gt_layer_paths": {k: self.gt_layer_paths[k] for k in sorted(self.gt_layer_paths)},
            "metrics": self.metrics.to_dict(),
            "land_use": self.land_use.to_dict(),
            "prompt": self.prompt,
        }

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "ManifestRecord":
        try:
            cell = data["cell"]
            return cls(
                cell=GridCell(
                    cell_id=cell["cell_id"],
                    city_id=cell["city_id"],
                    origin=tuple(cell["origin"]),
                    size_m=float(cell["size_m"]),
                    split=cell["split"],
                ),
                image_path=data["image_path"],
                dem_path=data["dem_path"],
                constraint_path=data["constraint_path"],
                gt_layer_paths=dict(data["gt_layer_paths"]),
                metrics=DensityMetrics.from_dict(data["metrics"]),
                land_use=LandUseMix.from_dict(data["land_use"]),
                prompt=data["prompt"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"bad manifest record: {exc}") from exc


@dataclass(frozen=True)
class CorpusManifest:
    records: tuple[ManifestRecord, ...]
    corpus_hash: str
    root: Path

    def resolve(self, rel_path: str) -> Path:
        return self.root / rel_path

    def by_split(self, split: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.cell.split == split]

    def by_city(self, city_id: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.cell.city_id == city_id]

    @property
    def city_ids(self) -> list[str]:
        return sorted({r.cell.city_id for r in self.records})


def _record_digest(record: ManifestRecord, root: Path, hash_file_contents: bool) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(record.to_json_dict(), sort_keys=True).encode("utf-8"))
    if hash_file_contents:
        for rel in record.all_paths():
            h.update(rel.encode("utf-8"))
            file_path = root / rel
            if not file_path.exists():
                raise ManifestError(f"referenced raster missing: {file_path}")
            h.update(hashlib.sha256(file_path.read_bytes()).digest())
    return h.hexdigest()


def compute_corpus_hash(
    records: Sequence[ManifestRecord], root: Path, hash_file_contents: bool = True
) -> str:
    digests = sorted(_record_digest(r, root, hash_file_contents) for r in records)
    h = hashlib.sha256()
    for d in digests:
        h.update(d.encode("ascii"))
    return h.hexdigest()


def write_manifest(
    records: Sequence[ManifestRecord],
    path: str | Path,
    hash_file_contents: bool = True,
) -> CorpusManifest:
    """Write JSON-lines manifest; last line is a hash trailer."""
    path = Path(path)
    root = path.parent
    root.mkdir(parents=True, exist_ok=True)
    corpus_hash = compute_corpus_hash(records, root, hash_file_contents)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.to_json_dict(), separators=(",", ":")) + "\n")
        f.write(json.dumps({"corpus_hash": corpus_hash}, separators=(",", ":")) + "\n")
    return CorpusManifest(records=tuple(records), corpus_hash=corpus_hash, root=root)


def load_manifest(path: str | Path, check_files: bool = True) -> CorpusManifest:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    root = path.parent
    records: list[ManifestRecord] = []
    corpus_hash = ""
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{line_no}: bad JSON: {exc}") from exc
            if "corpus_hash" in data and "cell" not in data:
                corpus_hash = data["corpus_hash"]
                continue
            records.append(ManifestRecord.from_json_dict(data))
    if check_files:
        for record in records:
            for rel in record.all_paths():
                if not (root / rel).exists():
                    raise ManifestError(f"referenced raster missing: {root / rel}")
    return CorpusManifest(records=tuple(records), corpus_hash=corpus_hash, root=root)


def load_record_layers(manifest: CorpusManifest, record: ManifestRecord) -> dict:
    """Load every raster referenced by a record, keyed by kind."""
    layers = {
        "image": load_raster(manifest.resolve(record.image_path)),
        "dem": load_raster(manifest.resolve(record.dem_path)),
        "constraint": load_raster(manifest.resolve(record.constraint_path)),
    }
    for kind, rel in record.gt_layer_paths.items():
        layers[kind] = load_raster(manifest.resolve(rel))
    return layers


def adapt_external_directory(
    directory: str | Path,
    manifest_path: str | Path,
    city_id: str = "external",
    city_name: str = "External City",
    cell_size_m: float = 400.0,
    global_seed: int = 0,
) -> CorpusManifest:
    """Build a manifest from a directory of `{cell_id}.{kind}.{png|f32}` rasters.

    This is the adapter for externally prepared GHSL-style layers: it groups
    files by cell id, recomputes metrics and land-use from the ground-truth
    layers, renders prompts, and assigns the deterministic 80/20 split.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise ManifestError(f"not a directory: {directory}")
    cells: dict[str, dict[str, Path]] = {}
    for file_path in sorted(directory.iterdir()):
        parts = file_path.name.split(".")
        if len(parts) < 3:
            continue
        kind, ext = parts[-2], parts[-1]
        if kind not in RASTER_KINDS:
            continue
        if ext not in ("png", "f32") or (kind in CONTINUOUS_KINDS) != (ext == "f32"):
            continue
        cell_id = ".".join(parts[:-2])
        cells.setdefault(cell_id, {})[kind] = file_path

    manifest_root = Path(manifest_path).parent.resolve()
    records = []
    grid_cells = [
        GridCell(cell_id=cell_id, city_id=city_id, size_m=cell_size_m)
        for cell_id in sorted(cells)
    ]
    grid_cells = assign_splits(grid_cells, global_seed)
    for cell in grid_cells:
        paths = cells[cell.cell_id]
        required = {"image", "dem", "constraint", *GT_LAYER_KINDS}
        missing = required - set(paths)
        if missing:
            raise ManifestError(f"cell {cell.cell_id}: missing raster kinds {sorted(missing)}")
        layers = {kind: load_raster(p) for kind, p in paths.items()}
        metrics = compute_density_metrics(layers, cell)
        land_use = compute_land_use_mix(layers["landuse"], cell)
        prompt = render_prompt(
            PromptSpec(city_name=city_name, metrics=metrics, land_use=land_use)
        )

        def rel(p: Path) -> str:
            return str(p.resolve().relative_to(manifest_root))

        records.append(
            ManifestRecord(
                cell=cell,
                image_path=rel(paths["image"]),
                dem_path=rel(paths["dem"]),
                constraint_path=rel(paths["constraint"]),
                gt_layer_paths={k: rel(paths[k]) for k in GT_LAYER_KINDS},
                metrics=metrics,
                land_use=land_use,
                prompt=prompt,
            )
        )
    return write_manifest(records, manifest_path)
