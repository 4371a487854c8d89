"""Regular-grid maps: binning projected points, hole filling, GM1 files.

A :class:`GridMap` is the common container for every 2D representation in the
pipeline (depth, smoothed depth, topography, half maps, enhanced maps, DGM,
label maps). Row 0 is the minimum-v row, column 0 the minimum-u column.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import SurfTopoError
from .planefit import ProjectedPoints

DEFAULT_PIXEL_SIZE = 0.065
DEFAULT_MAX_CELLS = 10**8

GM1_MAGIC = b"GM1\x00"
_GM1_HEADER = struct.Struct("<4sIIfff")


class RasterError(SurfTopoError):
    pass


class EmptyProjection(RasterError):
    pass


class GridTooLarge(RasterError):
    pass


class AllInvalid(RasterError):
    pass


class CorruptGridFile(RasterError):
    pass


@dataclass(frozen=True)
class GridMap:
    values: np.ndarray  # (height, width) float64
    valid: np.ndarray  # (height, width) bool
    pixel_size: float
    origin_u: float = 0.0
    origin_v: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 2 or values.shape != valid.shape or 0 in values.shape:
            raise RasterError(f"bad grid shapes {values.shape} / {valid.shape}")
        if not self.pixel_size > 0:
            raise RasterError(f"pixel_size must be positive, got {self.pixel_size}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_values(self, values: np.ndarray, valid: np.ndarray | None = None) -> "GridMap":
        """Same geometry, new contents."""
        valid = self.valid if valid is None else valid
        return replace(self, values=np.where(valid, values, 0.0), valid=valid)

    def same_geometry(self, other: "GridMap") -> bool:
        return (self.shape == other.shape and self.pixel_size == other.pixel_size
                and self.origin_u == other.origin_u and self.origin_v == other.origin_v)

    @classmethod
    def full(cls, values, pixel_size: float = 1.0, origin_u: float = 0.0,
             origin_v: float = 0.0) -> "GridMap":
        """Fully valid map from a 2D array (mostly for tests and image input)."""
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.ones(values.shape, dtype=bool), pixel_size, origin_u, origin_v)


def grid_cells(u: np.ndarray, v: np.ndarray, pixel_size: float,
               max_cells: int = DEFAULT_MAX_CELLS):
    """Grid geometry covering (u, v) plus a one-pixel rim, and each point's cell.

    Returns ``(height, width, origin_u, origin_v, flat_index)``. Pixel (0, 0)
    is centred one pixel below the minimum u and v.
    """
    if len(u) == 0:
        raise EmptyProjection("no points to rasterize")
    if not pixel_size > 0:
        raise RasterError(f"pixel_size must be positive, got {pixel_size}")
    origin_u = float(u.min()) - pixel_size
    origin_v = float(v.min()) - pixel_size
    col = np.floor((u - origin_u) / pixel_size + 0.5).astype(np.int64)
    row = np.floor((v - origin_v) / pixel_size + 0.5).astype(np.int64)
    width = int(col.max()) + 2
    height = int(row.max()) + 2
    if width * height > max_cells:
        raise GridTooLarge(f"{width}x{height} grid exceeds the {max_cells}-cell cap")
    return height, width, origin_u, origin_v, row * width + col


def rasterize_with_counts(proj: ProjectedPoints, pixel_size: float = DEFAULT_PIXEL_SIZE,
                          max_cells: int = DEFAULT_MAX_CELLS) -> tuple[GridMap, np.ndarray]:
    height, width, ou, ov, flat = grid_cells(proj.u, proj.v, pixel_size, max_cells)
    n = height * width
    sums = np.bincount(flat, weights=proj.d, minlength=n)
    counts = np.bincount(flat, minlength=n)
    valid = counts > 0
    values = np.zeros(n)
    values[valid] = sums[valid] / counts[valid]
    grid = GridMap(values.reshape(height, width), valid.reshape(height, width),
                   float(pixel_size), ou, ov)
    return grid, counts.reshape(height, width)


def rasterize(proj: ProjectedPoints, pixel_size: float = DEFAULT_PIXEL_SIZE,
              max_cells: int = DEFAULT_MAX_CELLS) -> GridMap:
    """Mean signed distance per cell; cells that received no point are invalid."""
    return rasterize_with_counts(proj, pixel_size, max_cells)[0]


_NEIGHBOURS = [(dy, dx) for dy in (0, 1, 2) for dx in (0, 1, 2) if (dy, dx) != (1, 1)]


def fill_holes(grid: GridMap, max_rounds: int = 64, min_neighbors: int = 3
               ) -> tuple[GridMap, int]:
    """Fill invalid cells from their valid 8-neighbours, Jacobi style.

    Each round reads only the previous round's state. Returns the new map and
    the number of cells still invalid.
    """
    if not grid.valid.any():
        raise AllInvalid("map has no valid cell")
    h, w = grid.shape
    # Zero-padded copies so every cell has 8 neighbours; only holes are visited.
    pv = np.zeros((h + 2, w + 2))
    pm = np.zeros((h + 2, w + 2))
    pv[1:-1, 1:-1] = np.where(grid.valid, grid.values, 0.0)
    pm[1:-1, 1:-1] = grid.valid
    ys, xs = np.nonzero(~grid.valid)
    for _ in range(max_rounds):
        if ys.size == 0:
            break
        total = np.zeros(ys.size)
        count = np.zeros(ys.size)
        for dy, dx in _NEIGHBOURS:
            total += pv[ys + dy, xs + dx]
            count += pm[ys + dy, xs + dx]
        fill = count >= min_neighbors
        if not fill.any():
            break
        fy, fx = ys[fill] + 1, xs[fill] + 1
        pv[fy, fx] = total[fill] / count[fill]
        pm[fy, fx] = 1.0
        ys, xs = ys[~fill], xs[~fill]
    valid = pm[1:-1, 1:-1] > 0
    out = replace(grid, values=pv[1:-1, 1:-1].copy(), valid=valid)
    return out, int(ys.size)


# --- GM1 -------------------------------------------------------------------

def write_gm1(path, grid: GridMap) -> None:
    header = _GM1_HEADER.pack(GM1_MAGIC, grid.width, grid.height,
                              grid.pixel_size, grid.origin_u, grid.origin_v)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.where(grid.valid, grid.values, 0.0).astype("<f4").tobytes())
        fh.write(grid.valid.astype(np.uint8).tobytes())


def read_gm1(path) -> GridMap:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _GM1_HEADER.size:
        raise CorruptGridFile(f"{path}: too short for a GM1 header")
    magic, width, height, px, ou, ov = _GM1_HEADER.unpack_from(data)
    if magic != GM1_MAGIC:
        raise CorruptGridFile(f"{path}: bad magic {magic!r}")
    n = width * height
    expected = _GM1_HEADER.size + 5 * n
    if n == 0 or len(data) != expected:
        raise CorruptGridFile(f"{path}: expected {expected} bytes, found {len(data)}")
    off = _GM1_HEADER.size
    values = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float64)
    valid = np.frombuffer(data, dtype=np.uint8, count=n, offset=off + 4 * n).astype(bool)
    try:
        return GridMap(values.reshape(height, width), valid.reshape(height, width),
                       float(px), float(ou), float(ov))
    except RasterError as exc:
        raise CorruptGridFile(f"{path}: {exc}") from None
