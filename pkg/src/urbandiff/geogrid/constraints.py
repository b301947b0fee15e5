"""Vector constraint geometries and their rasterization onto cell grids.

Coordinates live in the cell frame: x to the right, y upward, meters,
origin at the cell's lower-left corner. Raster row 0 is the top of the cell
(image convention). A pixel is set when its center lies strictly within
stroke_width/2 of a line segment, or inside a polygon (even-odd rule), which
makes stroked band widths analytically predictable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from urbandiff.geogrid.cells import GridCell
from urbandiff.geogrid.rasters import RasterLayer

CONSTRAINT_CLASSES = ("road", "rail", "water")


@dataclass(frozen=True)
class Geometry:
    """A polyline or polygon with a constraint class."""

    category: str
    points: tuple[tuple[float, float], ...]
    kind: str = "line"  # "line" | "polygon"

    def __post_init__(self) -> None:
        if self.category not in CONSTRAINT_CLASSES:
            raise ValueError(f"unknown constraint class {self.category!r}")
        if self.kind not in ("line", "polygon"):
            raise ValueError(f"unknown geometry kind {self.kind!r}")
        object.__setattr__(self, "points", tuple((float(x), float(y)) for x, y in self.points))

    def segment_length_m(self) -> float:
        pts = np.asarray(self.points, dtype=np.float64)
        if len(pts) < 2:
            return 0.0
        if self.kind == "polygon":
            pts = np.vstack([pts, pts[:1]])
        return float(np.sum(np.hypot(*(pts[1:] - pts[:-1]).T)))


def total_length_m(geoms: Sequence[Geometry], category: str | None = None) -> float:
    """Total centerline/perimeter length in meters, optionally per class."""
    return sum(
        g.segment_length_m()
        for g in geoms
        if category is None or g.category == category
    )


def pixel_centers(cell: GridCell, px: int) -> tuple[np.ndarray, np.ndarray]:
    """(X, Y) meshgrids of pixel-center coordinates in the cell frame."""
    ps = cell.size_m / px
    xs = (np.arange(px, dtype=np.float64) + 0.5) * ps
    ys = cell.size_m - (np.arange(px, dtype=np.float64) + 0.5) * ps
    return np.meshgrid(xs, ys)


def rasterize_constraints(
    geoms: Sequence[Geometry],
    cell: GridCell,
    px: int,
    stroke_width_px: float = 2.0,
    classes: Sequence[str] | None = None,
) -> RasterLayer:
    """Render constraint geometries to a binary raster.

    Lines are stroked at stroke_width_px (in pixels); polygons are filled.
    Degenerate geometries (fewer than 2 line points / 3 polygon points, or
    zero total length) are skipped; one warning reports how many.
    """
    if px <= 0:
        raise ValueError("px must be positive")
    ps = cell.size_m / px
    half_width = stroke_width_px * ps / 2.0
    X, Y = pixel_centers(cell, px)
    out = np.zeros((px, px), dtype=bool)

    skipped = 0
    for geom in geoms:
        if classes is not None and geom.category not in classes:
            continue
        if geom.kind == "line":
            if len(geom.points) < 2 or geom.segment_length_m() == 0.0:
                skipped += 1
                continue
            _stroke_line(out, X, Y, geom.points, half_width, ps)
        else:
            if len(geom.points) < 3 or geom.segment_length_m() == 0.0:
                skipped += 1
                continue
            out |= _fill_polygon(X, Y, geom.points)
    if skipped:
        warnings.warn(f"rasterize_constraints skipped {skipped} degenerate geometries")

    return RasterLayer(
        kind="constraint", values=out.astype(np.uint8), pixel_size_m=ps
    ).validate()


def _stroke_line(
    out: np.ndarray,
    X: np.ndarray,
    Y: np.ndarray,
    points: Sequence[tuple[float, float]],
    half_width: float,
    ps: float,
) -> None:
    px = out.shape[0]
    size_m = px * ps
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        dx, dy = x1 - x0, y1 - y0
        seg_len2 = dx * dx + dy * dy
        if seg_len2 == 0.0:
            continue
        # Restrict the distance test to rows/cols near the segment's bbox.
        xmin = max(min(x0, x1) - half_width - ps, 0.0)
        xmax = min(max(x0, x1) + half_width + ps, size_m)
        ymin = max(min(y0, y1) - half_width - ps, 0.0)
        ymax = min(max(y0, y1) + half_width + ps, size_m)
        c0 = max(int(xmin / ps) - 1, 0)
        c1 = min(int(xmax / ps) + 2, px)
        r0 = max(int((size_m - ymax) / ps) - 1, 0)
        r1 = min(int((size_m - ymin) / ps) + 2, px)
        if c0 >= c1 or r0 >= r1:
            continue
        Xs, Ys = X[r0:r1, c0:c1], Y[r0:r1, c0:c1]
        t = ((Xs - x0) * dx + (Ys - y0) * dy) / seg_len2
        t = np.clip(t, 0.0, 1.0)
        dist = np.hypot(Xs - (x0 + t * dx), Ys - (y0 + t * dy))
        out[r0:r1, c0:c1] |= dist < half_width


def _fill_polygon(
    X: np.ndarray, Y: np.ndarray, points: Sequence[tuple[float, float]]
) -> np.ndarray:
    """Even-odd point-in-polygon test on all pixel centers."""
    inside = np.zeros(X.shape, dtype=bool)
    pts = list(points)
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        if y0 == y1:
            continue
        crosses = (Y < max(y0, y1)) & (Y >= min(y0, y1))
        x_at = x0 + (Y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x_at > X)
    return inside
