import numpy as np
import pytest

from urbandiff.errors import ManifestError
from urbandiff.geogrid import (
    DensityMetrics,
    GridCell,
    LandUseMix,
    RasterLayer,
    load_manifest,
    raster_path_for,
    save_raster,
    write_manifest,
)
from urbandiff.geogrid.manifest import (
    GT_LAYER_KINDS,
    ManifestRecord,
    adapt_external_directory,
    compute_corpus_hash,
)


def make_record(root, cell_id, rng, px=8, city="cy"):
    cell = GridCell(cell_id=cell_id, city_id=city, split="train")
    ps = cell.size_m / px
    paths = {}
    img = RasterLayer("image", rng.integers(0, 255, (px, px, 3)).astype(np.uint8), ps)
    dem = RasterLayer("dem", rng.normal(10, 2, (px, px)).astype(np.float32), ps)
    con = RasterLayer("constraint", rng.integers(0, 2, (px, px)).astype(np.uint8), ps)
    for kind, layer in (("image", img), ("dem", dem), ("constraint", con)):
        paths[kind] = raster_path_for(root, cell_id, kind)
        save_raster(layer, paths[kind])
    gt_paths = {}
    for kind in GT_LAYER_KINDS:
        if kind == "landuse":
            layer = RasterLayer("landuse", rng.integers(0, 8, (px, px)).astype(np.uint8), ps)
        else:
            layer = RasterLayer(kind, rng.uniform(0, 50, (px, px)).astype(np.float32), ps)
        p = raster_path_for(root, cell_id, kind)
        save_raster(layer, p)
        gt_paths[kind] = p.name
    return ManifestRecord(
        cell=cell,
        image_path=paths["image"].name,
        dem_path=paths["dem"].name,
        constraint_path=paths["constraint"].name,
        gt_layer_paths=gt_paths,
        metrics=DensityMetrics(bcr=0.25, bvd=2.0, rpd=0.01, rvc=150.0, road_density=12.0),
        land_use=LandUseMix(ratios={"residential": 0.5, "park": 0.25}),
        prompt="Satellite imagery of Testville.",
    )


def test_empty_manifest_round_trip(tmp_path):
    manifest = write_manifest([], tmp_path / "manifest.jsonl")
    assert manifest.records == ()
    back = load_manifest(tmp_path / "manifest.jsonl")
    assert back.records == ()
    assert back.corpus_hash == manifest.corpus_hash


def test_round_trip_100_records(tmp_path, rng):
    records = [make_record(tmp_path, f"c{i:03d}", rng) for i in range(100)]
    manifest = write_manifest(records, tmp_path / "manifest.jsonl")
    back = load_manifest(tmp_path / "manifest.jsonl")
    assert len(back.records) == 100
    assert back.corpus_hash == manifest.corpus_hash
    for a, b in zip(manifest.records, back.records):
        assert a == b


def test_corpus_hash_order_invariant(tmp_path, rng):
    records = [make_record(tmp_path, f"c{i}", rng) for i in range(10)]
    h1 = compute_corpus_hash(records, tmp_path)
    h2 = compute_corpus_hash(list(reversed(records)), tmp_path)
    assert h1 == h2


def test_corpus_hash_sees_file_content(tmp_path, rng):
    records = [make_record(tmp_path, "c0", rng)]
    h1 = compute_corpus_hash(records, tmp_path)
    # Rewrite one referenced raster with different content; hash must change.
    path = tmp_path / records[0].dem_path
    save_raster(
        RasterLayer("dem", np.zeros((8, 8), np.float32), 50.0),
        path,
    )
    h2 = compute_corpus_hash(records, tmp_path)
    assert h1 != h2


def test_missing_file_detected(tmp_path, rng):
    records = [make_record(tmp_path, "c0", rng)]
    manifest_path = tmp_path / "manifest.jsonl"
    write_manifest(records, manifest_path)
    (tmp_path / records[0].image_path).unlink()
    with pytest.raises(ManifestError, match="missing"):
        load_manifest(manifest_path)
    assert len(load_manifest(manifest_path, check_files=False).records) == 1


def test_bad_json_line(tmp_path):
    path = tmp_path / "manifest.jsonl"
    path.write_text('{"cell": not json}\n')
    with pytest.raises(ManifestError, match="bad JSON"):
        load_manifest(path)


def test_adapter_builds_manifest_from_directory(tmp_path, rng):
    ext = tmp_path / "external"
    ext.mkdir()
    px, ps = 8, 50.0
    for cell_id in ("k0", "k1", "k2", "k3", "k4"):
        save_raster(RasterLayer("image", rng.integers(0, 255, (px, px, 3)).astype(np.uint8), ps), raster_path_for(ext, cell_id, "image"))
        save_raster(RasterLayer("dem", rng.normal(0, 1, (px, px)).astype(np.float32), ps), raster_path_for(ext, cell_id, "dem"))
        save_raster(RasterLayer("constraint", np.zeros((px, px), np.uint8), ps), raster_path_for(ext, cell_id, "constraint"))
        for kind in GT_LAYER_KINDS:
            if kind == "landuse":
                layer = RasterLayer("landuse", np.zeros((px, px), np.uint8), ps)
            else:
                layer = RasterLayer(kind, np.full((px, px), 10.0, np.float32), ps)
            save_raster(layer, raster_path_for(ext, cell_id, kind))
    manifest = adapt_external_directory(ext, tmp_path / "manifest.jsonl", city_name="Externalia")
    assert len(manifest.records) == 5
    rec = manifest.records[0]
    assert rec.metrics.bcr == pytest.approx(10.0 * 64 / 160_000.0, rel=1e-9)
    assert rec.prompt.startswith("Satellite imagery of Externalia. The BCR in this area is")
    assert {r.cell.split for r in manifest.records} == {"train", "test"}
    back = load_manifest(tmp_path / "manifest.jsonl")
    assert back.corpus_hash == manifest.corpus_hash
