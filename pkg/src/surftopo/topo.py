"""Curvature compensation, peak/valley split and log enhancement.

Sign convention: a depth map grows *away* from the viewer, who looks down the
support-plane normal. Positive topography therefore means "deeper than the
local average surface" (a valley), negative means a peak.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SurfTopoError
from .raster import GridMap

DEFAULT_STRUCTURE_SIZE = 4.0
DEFAULT_EPSILON = 1e-4


class TopoError(SurfTopoError):
    pass


class InvalidSize(TopoError):
    pass


class KernelLargerThanMap(TopoError):
    pass


class InvalidCells(TopoError):
    pass


class NegativeInput(TopoError):
    pass


class MapTooSmall(TopoError):
    pass


@dataclass(frozen=True)
class GaussianKernel:
    sigma: float  # pixels
    size: int  # odd support W
    taps: np.ndarray  # normalized 1D profile, length W

    @property
    def coefficients(self) -> np.ndarray:
        return np.outer(self.taps, self.taps)

    @property
    def radius(self) -> int:
        return self.size // 2


def kernel_from_size(size: int, sigma: float | None = None) -> GaussianKernel:
    """Odd-width kernel with ``sigma = W / 6`` unless given."""
    if size < 1 or size % 2 == 0:
        raise InvalidSize(f"kernel support must be a positive odd integer, got {size}")
    sigma = size / 6.0 if sigma is None else float(sigma)
    r = size // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    taps = np.exp(-(x * x) / (2.0 * sigma * sigma))
    taps /= taps.sum()
    return GaussianKernel(sigma, size, taps)


def make_gaussian_kernel(structure_size_mm: float, pixel_size: float) -> GaussianKernel:
    """Kernel whose support spans ``structure_size_mm`` at the given resolution.

    W = round(structure / pixel), bumped to the next odd number; sigma = W/6.
    4 mm at 0.065 mm/px gives W = 63, sigma = 10.5.
    """
    if not (structure_size_mm > 0 and pixel_size > 0):
        raise InvalidSize("structure size and pixel size must be positive")
    w = int(math.floor(structure_size_mm / pixel_size + 0.5))
    if w % 2 == 0:
        w += 1
    return kernel_from_size(w)


_STRIP_BYTES = 1 << 18


def _pass(a: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    # Work in row strips small enough to stay in cache. Every output value
    # still sums its taps in the same fixed order, so strips change nothing.
    r = len(taps) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    p = np.pad(a, pad, mode="edge")
    h, w = a.shape
    out = np.zeros_like(a)
    rows = max(1, _STRIP_BYTES // (8 * (w + 2 * r)))
    tmp = np.empty((rows, w))
    for y0 in range(0, h, rows):
        y1 = min(h, y0 + rows)
        o = out[y0:y1]
        t = tmp[:y1 - y0]
        for k, c in enumerate(taps):
            src = p[y0 + k:y1 + k] if axis == 0 else p[y0:y1, k:k + w]
            np.multiply(src, c, out=t)
            o += t
    return out


def convolve(grid: GridMap, kernel: GaussianKernel) -> GridMap:
    """Separable Gaussian smoothing with replicate borders."""
    if kernel.size > min(grid.shape):
        raise KernelLargerThanMap(f"kernel W={kernel.size} exceeds map {grid.width}x{grid.height}")
    if not grid.valid.all():
        raise InvalidCells(f"{int((~grid.valid).sum())} invalid cells; fill holes first")
    out = _pass(_pass(grid.values, kernel.taps, axis=1), kernel.taps, axis=0)
    return grid.with_values(out)


def to_depth(height_map: GridMap) -> GridMap:
    """Turn signed plane distances (positive toward the normal) into depth."""
    return height_map.with_values(-height_map.values)


def extract_topography(depth: GridMap, kernel: GaussianKernel) -> GridMap:
    """Topography map: depth minus its Gaussian-smoothed local average."""
    smooth = convolve(depth, kernel)
    return depth.with_values(depth.values - smooth.values)


def split_peaks_valleys(topo: GridMap) -> tuple[GridMap, GridMap]:
    """Return ``(valleys, peaks)`` = ``(max(T, 0), |min(T, 0)|)``."""
    t = topo.values
    return (topo.with_values(np.maximum(t, 0.0)),
            topo.with_values(np.abs(np.minimum(t, 0.0))))


def enhance(half_map: GridMap, kernel: GaussianKernel,
            epsilon: float = DEFAULT_EPSILON) -> GridMap:
    """``log(half_map * G + epsilon)``; epsilon keeps empty regions finite."""
    if not epsilon > 0:
        raise InvalidSize(f"epsilon must be positive, got {epsilon}")
    if (half_map.values < 0).any():
        raise NegativeInput("half map has negative values")
    smooth = convolve(half_map, kernel)
    # Rounding in the weighted sum can leave tiny negatives next to zeros.
    return half_map.with_values(np.log(np.maximum(smooth.values, 0.0) + epsilon))


def depth_gradient_map(depth: GridMap) -> GridMap:
    """Gradient magnitude of the depth map in mm/mm.

    Central differences inside, one-sided differences on the border.
    """
    if depth.height < 3 or depth.width < 3:
        raise MapTooSmall(f"DGM needs at least 3x3 pixels, got {depth.width}x{depth.height}")
    if not depth.valid.all():
        raise InvalidCells("DGM needs a fully valid map")
    gy, gx = np.gradient(depth.values, depth.pixel_size)
    return depth.with_values(np.hypot(gx, gy))
