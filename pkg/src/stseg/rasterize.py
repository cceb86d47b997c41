"""Vector road polylines -> binary label rasters.

Lines are drawn with an exact-integer midpoint rasterizer (one pixel per
major-axis step, minor coordinate rounded half-up), which is the classic
Bresenham pixel set; segments are canonicalized so the drawn set does not
depend on vertex order.  Morphological dilation with a square element widens
the one-pixel lines into road-scale ribbons.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass
class VectorRoads:
    """Polylines in image pixel coordinates, columns (x, y) = (col, row)."""
    polylines: list[np.ndarray] = field(default_factory=list)

    def validate(self) -> None:
        for line in self.polylines:
            a = np.asarray(line)
            if a.ndim != 2 or a.shape[1] != 2 or a.shape[0] < 2:
                raise ValueError("each polyline needs >= 2 (x, y) points")


def load_geojson_roads(path) -> VectorRoads:
    """Reads LineString / MultiLineString features with pixel coordinates."""
    with open(path) as f:
        doc = json.load(f)
    geoms = []
    if doc.get("type") == "FeatureCollection":
        geoms = [feat.get("geometry") or {} for feat in doc.get("features", [])]
    elif doc.get("type") in ("LineString", "MultiLineString"):
        geoms = [doc]
    lines: list[np.ndarray] = []
    for g in geoms:
        if g.get("type") == "LineString":
            lines.append(np.asarray(g["coordinates"], dtype=np.float64))
        elif g.get("type") == "MultiLineString":
            lines.extend(np.asarray(c, dtype=np.float64) for c in g["coordinates"])
    roads = VectorRoads(lines)
    roads.validate()
    return roads


def _round_half_up(a: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(a, dtype=np.float64) + 0.5).astype(np.int64)


def line_pixels(x0: int, y0: int, x1: int, y1: int) -> tuple[np.ndarray, np.ndarray]:
    """All (row, col) pixels of the segment, one per major-axis step.

    Integer arithmetic throughout: minor = minor0 + floor((2*dminor*m + dmajor)
    / (2*dmajor)) is the exact half-up rounding of the ideal line, so the
    result is reproducible and independent of traversal direction.
    """
    dx, dy = x1 - x0, y1 - y0
    if dx == 0 and dy == 0:
        return np.array([y0]), np.array([x0])
    if abs(dx) >= abs(dy):
        if dx < 0:
            x0, y0, x1, y1 = x1, y1, x0, y0
            dx, dy = -dx, -dy
        m = np.arange(dx + 1, dtype=np.int64)
        ys = y0 + (2 * dy * m + dx) // (2 * dx)
        return ys, x0 + m
    if dy < 0:
        x0, y0, x1, y1 = x1, y1, x0, y0
        dx, dy = -dx, -dy
    m = np.arange(dy + 1, dtype=np.int64)
    xs = x0 + (2 * dx * m + dy) // (2 * dy)
    return y0 + m, xs


def rasterize_roads(roads: VectorRoads, height: int, width: int) -> np.ndarray:
    """[H, W] uint8 mask with 1 on every rasterized line pixel.

    Vertices are rounded to the pixel grid first; pixels outside the raster
    are clipped away.  An empty polyline list yields an all-zero mask.
    """
    roads.validate()
    mask = np.zeros((height, width), dtype=np.uint8)
    for line in roads.polylines:
        pts = _round_half_up(np.asarray(line, dtype=np.float64))
        for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
            rows, cols = line_pixels(int(x0), int(y0), int(x1), int(y1))
            keep = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
            mask[rows[keep], cols[keep]] = 1
    return mask


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation with a (2*radius+1)^2 square element; radius 0 is the
    identity."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    m = (np.asarray(mask) > 0).astype(np.uint8)
    if radius == 0:
        return m.copy()
    padded = np.pad(m, radius)
    windows = sliding_window_view(padded, (2 * radius + 1, 2 * radius + 1))
    return windows.max(axis=(2, 3)).astype(np.uint8)
