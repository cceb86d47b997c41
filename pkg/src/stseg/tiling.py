"""Grid decomposition of large rasters: training patch extraction and
overlap-tiled inference with seam-free stitching.

Grids place windows at stride intervals and clamp the final window to the
border (shifted, never shrunk), so the union always covers the raster.
Stitching resolves overlaps by hard selection: each pixel comes from the tile
whose center is nearest (ties to the earlier origin), so a network that
returns its input stitches back to the exact input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import SequenceSample


def axis_origins(extent: int, window: int, stride: int) -> list[int]:
    """Window start offsets along one axis, final one clamped to the border."""
    if window > extent:
        raise ValueError(f"window {window} exceeds extent {extent}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    origins = list(range(0, extent - window + 1, stride))
    if origins[-1] + window < extent:
        origins.append(extent - window)
    return origins


@dataclass(frozen=True)
class TileGrid:
    height: int
    width: int
    tile_h: int
    tile_w: int
    overlap: int
    origins: tuple[tuple[int, int], ...]  # row-major order

    @property
    def n_tiles(self) -> int:
        return len(self.origins)


def tile_plan(height: int, width: int, tile: int = 2048,
              overlap: int = 512) -> TileGrid:
    """Overlapping inference grid; images smaller than the tile degrade to a
    single tile clamped to the image."""
    if not tile > overlap >= 0:
        raise ValueError("need tile > overlap >= 0")
    tile_h, tile_w = min(tile, height), min(tile, width)
    stride = tile - overlap
    rows = axis_origins(height, tile_h, stride)
    cols = axis_origins(width, tile_w, stride)
    origins = tuple((r, c) for r in rows for c in cols)
    return TileGrid(height=height, width=width, tile_h=tile_h, tile_w=tile_w,
                    overlap=overlap, origins=origins)


def _axis_bands(origins: list[int], window: int, extent: int) -> list[tuple[int, int]]:
    """Half-open pixel ranges owned by each window under nearest-center
    selection; comparisons use doubled coordinates so midpoint ties resolve
    exactly (to the earlier origin)."""
    bands = []
    start = 0
    for i, origin in enumerate(origins):
        if i + 1 < len(origins):
            c2_here = 2 * origin + window - 1
            c2_next = 2 * origins[i + 1] + window - 1
            # last y with |2y - c2_here| <= |2y - c2_next|
            end = (c2_here + c2_next) // 4 + 1
        else:
            end = extent
        bands.append((start, end))
        start = end
    return bands


def stitch(tiles: list[np.ndarray], grid: TileGrid, mode: str = "nearest") -> np.ndarray:
    """Recombines per-tile maps [C,tile_h,tile_w] into one [C,H,W] raster."""
    if len(tiles) != grid.n_tiles:
        raise ValueError(f"expected {grid.n_tiles} tiles, got {len(tiles)}")
    for t in tiles:
        if t.ndim != 3 or t.shape[1:] != (grid.tile_h, grid.tile_w):
            raise ValueError(f"tile shape {t.shape} does not match the grid")
    channels = tiles[0].shape[0]
    rows = sorted({r for r, _ in grid.origins})
    cols = sorted({c for _, c in grid.origins})
    index = {origin: i for i, origin in enumerate(grid.origins)}

    if mode == "average":
        acc = np.zeros((channels, grid.height, grid.width), dtype=np.float64)
        cnt = np.zeros((grid.height, grid.width), dtype=np.float64)
        for (r, c), i in index.items():
            acc[:, r:r + grid.tile_h, c:c + grid.tile_w] += tiles[i]
            cnt[r:r + grid.tile_h, c:c + grid.tile_w] += 1.0
        return (acc / cnt).astype(tiles[0].dtype)
    if mode != "nearest":
        raise ValueError(f"unknown stitch mode {mode!r}")

    out = np.empty((channels, grid.height, grid.width), dtype=tiles[0].dtype)
    row_bands = _axis_bands(rows, grid.tile_h, grid.height)
    col_bands = _axis_bands(cols, grid.tile_w, grid.width)
    for (r0, r1), orow in zip(row_bands, rows):
        for (c0, c1), ocol in zip(col_bands, cols):
            tile = tiles[index[(orow, ocol)]]
            out[:, r0:r1, c0:c1] = tile[:, r0 - orow:r1 - orow, c0 - ocol:c1 - ocol]
    return out


def extract_patches(sample: SequenceSample, patch: int = 512,
                    stride: int = 512) -> list[SequenceSample]:
    """Regular-grid square patches; the border remainder is covered by a
    clamped final patch per axis."""
    h, w = sample.label.shape
    if patch > h or patch > w:
        raise ValueError(f"image {h}x{w} smaller than patch {patch}")
    out = []
    for r in axis_origins(h, patch, stride):
        for c in axis_origins(w, patch, stride):
            out.append(SequenceSample(
                images=[np.ascontiguousarray(img[:, r:r + patch, c:c + patch])
                        for img in sample.images],
                label=np.ascontiguousarray(sample.label[r:r + patch, c:c + patch]),
                dates=list(sample.dates),
                meta={**sample.meta, "patch_origin": [r, c]}))
    return out
