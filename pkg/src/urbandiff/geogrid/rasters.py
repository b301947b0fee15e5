"""Raster layers and their two on-disk formats.

Images and categorical/binary rasters travel as PNG (8-bit RGB or 8-bit
gray). Continuous rasters (DEM, population, surfaces, volumes) travel as raw
little-endian float32, row-major, prefixed by a 64-byte JSON header. The
header uses single-letter keys — {"k","w","h","p","n"} for kind, width,
height, pixel_size_m, nodata — because the full names do not fit in the fixed
64-byte budget for every kind; it is space-padded to exactly 64 bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image, PngImagePlugin

from urbandiff.errors import RasterFormatError

IMAGE_KIND = "image"
CATEGORICAL_KINDS = ("constraint", "landuse")
CONTINUOUS_KINDS = (
    "dem",
    "population",
    "built_surface",
    "built_volume",
    "nonres_surface",
    "nonres_volume",
)
RASTER_KINDS = (IMAGE_KIND,) + CATEGORICAL_KINDS + CONTINUOUS_KINDS

_HEADER_BYTES = 64
_NONNEGATIVE_KINDS = ("population", "built_surface", "built_volume", "nonres_surface", "nonres_volume")


@dataclass(frozen=True)
class RasterLayer:
    """A single-kind raster covering one grid cell.

    values dtype by kind: image (H, W, 3) uint8; constraint/landuse (H, W)
    uint8; continuous kinds (H, W) float32. nodata applies to continuous
    kinds only.
    """

    kind: str
    values: np.ndarray
    pixel_size_m: float
    nodata: float | None = None

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    def validate(self) -> "RasterLayer":
        """Check the type invariants, raising RasterFormatError on violation."""
        if self.kind not in RASTER_KINDS:
            raise RasterFormatError(f"unknown raster kind {self.kind!r}")
        v = self.values
        if v.ndim not in (2, 3) or v.shape[0] <= 0 or v.shape[1] <= 0:
            raise RasterFormatError(f"{self.kind}: bad shape {v.shape}")
        if self.pixel_size_m <= 0:
            raise RasterFormatError(f"{self.kind}: pixel_size_m must be positive")
        if self.kind == IMAGE_KIND:
            if v.ndim != 3 or v.shape[2] != 3 or v.dtype != np.uint8:
                raise RasterFormatError("image must be (H, W, 3) uint8")
        elif self.kind in CATEGORICAL_KINDS:
            if v.ndim != 2 or v.dtype != np.uint8:
                raise RasterFormatError(f"{self.kind} must be (H, W) uint8")
            if self.kind == "constraint" and not np.isin(v, (0, 1)).all():
                raise RasterFormatError("constraint values must be 0 or 1")
        else:
            if v.ndim != 2 or v.dtype != np.float32:
                raise RasterFormatError(f"{self.kind} must be (H, W) float32")
            if self.kind in _NONNEGATIVE_KINDS:
                data = v if self.nodata is None else v[v != np.float32(self.nodata)]
                if data.size and float(data.min()) < 0:
                    raise RasterFormatError(f"{self.kind} has negative values")
        return self

    def data_mask(self) -> np.ndarray:
        """Boolean mask of valid (non-nodata) pixels."""
        if self.kind in CONTINUOUS_KINDS and self.nodata is not None:
            return self.values != np.float32(self.nodata)
        return np.ones(self.values.shape[:2], dtype=bool)


def raster_path_for(directory: str | Path, cell_id: str, kind: str) -> Path:
    """Canonical file path `{cell_id}.{kind}.{png|f32}` for a layer."""
    ext = "f32" if kind in CONTINUOUS_KINDS else "png"
    return Path(directory) / f"{cell_id}.{kind}.{ext}"


def save_raster(layer: RasterLayer, path: str | Path) -> Path:
    path = Path(path)
    layer.validate()
    path.parent.mkdir(parents=True, exist_ok=True)
    if layer.kind in CONTINUOUS_KINDS:
        _save_f32(layer, path)
    else:
        _save_png(layer, path)
    return path


def load_raster(path: str | Path) -> RasterLayer:
    path = Path(path)
    if not path.exists():
        raise RasterFormatError(f"raster file not found: {path}")
    if path.suffix == ".f32":
        return _load_f32(path)
    if path.suffix == ".png":
        return _load_png(path)
    raise RasterFormatError(f"unrecognized raster extension: {path.name}")


def _save_png(layer: RasterLayer, path: Path) -> None:
    if layer.kind == IMAGE_KIND:
        img = Image.fromarray(layer.values, mode="RGB")
    elif layer.kind == "constraint":
        img = Image.fromarray((layer.values * 255).astype(np.uint8), mode="L")
    else:
        img = Image.fromarray(layer.values, mode="L")
    info = PngImagePlugin.PngInfo()
    info.add_text("urbandiff:kind", layer.kind)
    info.add_text("urbandiff:pixel_size_m", repr(float(layer.pixel_size_m)))
    img.save(path, format="PNG", pnginfo=info)


def _load_png(path: Path) -> RasterLayer:
    with Image.open(path) as img:
        text = dict(getattr(img, "text", {}))
        arr = np.asarray(img)
    kind = text.get("urbandiff:kind") or _kind_from_name(path)
    pixel_size = float(text.get("urbandiff:pixel_size_m", "1.0"))
    if kind == IMAGE_KIND:
        if arr.ndim == 2:
            arr = np.stack([arr] * 3, axis=-1)
        values = arr[:, :, :3].astype(np.uint8)
    elif kind == "constraint":
        values = (arr > 127).astype(np.uint8)
    elif kind == "landuse":
        values = arr.astype(np.uint8)
    else:
        raise RasterFormatError(f"{path.name}: PNG cannot carry kind {kind!r}")
    return RasterLayer(kind=kind, values=values, pixel_size_m=pixel_size).validate()


def _save_f32(layer: RasterLayer, path: Path) -> None:
    header = {
        "k": layer.kind,
        "w": layer.width,
        "h": layer.height,
        "p": float(layer.pixel_size_m),
        "n": None if layer.nodata is None else float(layer.nodata),
    }
    encoded = json.dumps(header, separators=(",", ":")).encode("ascii")
    if len(encoded) > _HEADER_BYTES:
        raise RasterFormatError(
            f"{layer.kind}: header does not fit in {_HEADER_BYTES} bytes ({len(encoded)}); "
            "use a shorter pixel size representation"
        )
    payload = np.ascontiguousarray(layer.values, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(encoded.ljust(_HEADER_BYTES, b" "))
        f.write(payload)


def _load_f32(path: Path) -> RasterLayer:
    raw = path.read_bytes()
    if len(raw) < _HEADER_BYTES:
        raise RasterFormatError(f"{path.name}: truncated header")
    try:
        header = json.loads(raw[:_HEADER_BYTES].decode("ascii").strip())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise RasterFormatError(f"{path.name}: bad header: {exc}") from exc
    kind, width, height = header["k"], int(header["w"]), int(header["h"])
    expected = width * height * 4
    body = raw[_HEADER_BYTES:]
    if len(body) != expected:
        raise RasterFormatError(
            f"{path.name}: payload is {len(body)} bytes, expected {expected}"
        )
    values = np.frombuffer(body, dtype="<f4").reshape(height, width).copy()
    return RasterLayer(
        kind=kind,
        values=values,
        pixel_size_m=float(header["p"]),
        nodata=None if header.get("n") is None else float(header["n"]),
    ).validate()


def _kind_from_name(path: Path) -> str:
    # Files follow `{cell_id}.{kind}.{ext}`; fall back for PNGs without tags.
    parts = path.name.split(".")
    if len(parts) >= 3 and parts[-2] in RASTER_KINDS:
        return parts[-2]
    raise RasterFormatError(f"{path.name}: cannot infer raster kind")


def image_to_unit(values: np.ndarray) -> np.ndarray:
    """uint8 image (H, W, 3) -> float32 in [0, 1], channel-first (3, H, W)."""
    return (values.astype(np.float32) / 255.0).transpose(2, 0, 1)


def unit_to_image(values: np.ndarray) -> np.ndarray:
    """float32 (3, H, W) in [0, 1] -> uint8 image (H, W, 3), rounded and clipped."""
    arr = np.clip(np.rint(values * 255.0), 0, 255).astype(np.uint8)
    return arr.transpose(1, 2, 0)
