import json

import numpy as np
import pytest

from urbandiff.errors import RasterFormatError
from urbandiff.geogrid import RasterLayer, load_raster, raster_path_for, save_raster
from urbandiff.geogrid.rasters import image_to_unit, unit_to_image


def test_f32_round_trip_exact(tmp_path, rng):
    values = rng.normal(120.0, 35.0, size=(48, 32)).astype(np.float32)
    layer = RasterLayer(kind="dem", values=values, pixel_size_m=6.25)
    path = save_raster(layer, tmp_path / "c0.dem.f32")
    back = load_raster(path)
    assert back.kind == "dem"
    assert back.pixel_size_m == 6.25
    assert back.nodata is None
    np.testing.assert_array_equal(back.values, values)


def test_f32_header_is_exactly_64_bytes(tmp_path, rng):
    values = np.abs(rng.normal(size=(16, 16))).astype(np.float32)
    layer = RasterLayer(kind="nonres_surface", values=values, pixel_size_m=6.25, nodata=-9999.0)
    path = save_raster(layer, tmp_path / "c0.nonres_surface.f32")
    raw = path.read_bytes()
    header = json.loads(raw[:64].decode("ascii"))
    assert header == {"k": "nonres_surface", "w": 16, "h": 16, "p": 6.25, "n": -9999.0}
    assert len(raw) == 64 + 16 * 16 * 4
    assert load_raster(path).nodata == -9999.0


def test_f32_truncation_detected(tmp_path, rng):
    values = np.abs(rng.normal(size=(8, 8))).astype(np.float32)
    path = save_raster(RasterLayer("population", values, 6.25), tmp_path / "c.population.f32")
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(RasterFormatError, match="payload"):
        load_raster(path)


def test_image_png_round_trip(tmp_path, rng):
    values = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
    layer = RasterLayer(kind="image", values=values, pixel_size_m=6.25)
    back = load_raster(save_raster(layer, tmp_path / "c0.image.png"))
    assert back.kind == "image"
    assert back.pixel_size_m == 6.25
    np.testing.assert_array_equal(back.values, values)


def test_constraint_and_landuse_png_round_trip(tmp_path, rng):
    constraint = rng.integers(0, 2, size=(32, 32), dtype=np.uint8)
    landuse = rng.integers(0, 8, size=(32, 32), dtype=np.uint8)
    c_back = load_raster(save_raster(RasterLayer("constraint", constraint, 12.5), tmp_path / "c0.constraint.png"))
    l_back = load_raster(save_raster(RasterLayer("landuse", landuse, 12.5), tmp_path / "c0.landuse.png"))
    np.testing.assert_array_equal(c_back.values, constraint)
    np.testing.assert_array_equal(l_back.values, landuse)
    assert c_back.pixel_size_m == l_back.pixel_size_m == 12.5


def test_validation_rejects_bad_layers(rng):
    with pytest.raises(RasterFormatError, match="unknown raster kind"):
        RasterLayer("elevation", np.zeros((4, 4), np.float32), 1.0).validate()
    with pytest.raises(RasterFormatError, match="uint8"):
        RasterLayer("image", np.zeros((4, 4, 3), np.float32), 1.0).validate()
    with pytest.raises(RasterFormatError, match="0 or 1"):
        RasterLayer("constraint", np.full((4, 4), 2, np.uint8), 1.0).validate()
    with pytest.raises(RasterFormatError, match="negative"):
        RasterLayer("population", np.full((4, 4), -1.0, np.float32), 1.0).validate()
    with pytest.raises(RasterFormatError, match="pixel_size"):
        RasterLayer("dem", np.zeros((4, 4), np.float32), 0.0).validate()
    # DEM may be negative (below sea level); nodata pixels are exempt from sign checks.
    RasterLayer("dem", np.full((4, 4), -12.0, np.float32), 1.0).validate()
    v = np.full((4, 4), -9999.0, np.float32)
    RasterLayer("population", v, 1.0, nodata=-9999.0).validate()


def test_raster_path_naming(tmp_path):
    assert raster_path_for(tmp_path, "cell7", "dem").name == "cell7.dem.f32"
    assert raster_path_for(tmp_path, "cell7", "image").name == "cell7.image.png"
    assert raster_path_for(tmp_path, "cell7", "landuse").name == "cell7.landuse.png"


def test_unit_conversion_round_trip(rng):
    img = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    np.testing.assert_array_equal(unit_to_image(image_to_unit(img)), img)
    unit = image_to_unit(img)
    assert unit.shape == (3, 16, 16)
    assert unit.dtype == np.float32
    assert float(unit.max()) <= 1.0 and float(unit.min()) >= 0.0
