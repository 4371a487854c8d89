"""Block slicing and block descriptors.

GHS and SF are built on the orthonormal DCT-II; LBP, GLCM and HOG are the
usual texture baselines. All extractors take a 2D array and are
deterministic.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field

import numpy as np

from .errors import SurfTopoError
from .raster import GridMap

FAMILIES = ("ghs", "sf", "lbp", "glcm", "hog")

DEFAULT_BLOCK_SIZE = 32
DEFAULT_STRIDE = 16
DEFAULT_THETA = 0.5


class FeatureError(SurfTopoError):
    pass


class BlockLargerThanMap(FeatureError):
    pass


class DegenerateRange(FeatureError):
    pass


class BlockTooSmall(FeatureError):
    pass


class GeometryMismatch(FeatureError):
    pass


class InconsistentLengths(FeatureError):
    pass


class EmptyDataset(FeatureError):
    pass


@dataclass(frozen=True)
class Block:
    pixels: np.ndarray
    origin: tuple[int, int]  # (x, y) of the top-left pixel in the source map
    label: int | None = None


def blockify(grid: GridMap, labels: GridMap | None, block_size: int = DEFAULT_BLOCK_SIZE,
             stride: int = DEFAULT_STRIDE, theta: float = DEFAULT_THETA) -> list[Block]:
    """Cut the map into stride-aligned B x B blocks, row-major.

    Blocks touching an invalid map pixel are skipped. A block is class 2 when
    at least ``theta`` of its pixels carry label 2 in ``labels``.
    """
    if block_size > grid.height or block_size > grid.width:
        raise BlockLargerThanMap(f"block {block_size} does not fit a {grid.width}x{grid.height} map")
    if block_size < 16 or stride < 1:
        raise FeatureError(f"block size must be >= 16 and stride positive, got {block_size}/{stride}")
    if not 0 < theta <= 1:
        raise FeatureError(f"theta must lie in (0, 1], got {theta}")
    if labels is not None and labels.shape != grid.shape:
        raise GeometryMismatch("label map and feature map differ in size")

    b = block_size
    invalid = (~grid.valid).astype(np.int64)
    # Summed-area table for O(1) invalid counts per block.
    sat = np.zeros((grid.height + 1, grid.width + 1), dtype=np.int64)
    sat[1:, 1:] = invalid.cumsum(0).cumsum(1)
    if labels is not None:
        is2 = ((labels.values == 2) & labels.valid).astype(np.int64)
        sat2 = np.zeros_like(sat)
        sat2[1:, 1:] = is2.cumsum(0).cumsum(1)

    def box(t, y, x):
        return t[y + b, x + b] - t[y, x + b] - t[y + b, x] + t[y, x]

    blocks = []
    for y in range(0, grid.height - b + 1, stride):
        for x in range(0, grid.width - b + 1, stride):
            if box(sat, y, x):
                continue
            label = None
            if labels is not None:
                label = 2 if box(sat2, y, x) >= theta * b * b else 1
            blocks.append(Block(grid.values[y:y + b, x:x + b].copy(), (x, y), label))
    return blocks


# --- DCT ---------------------------------------------------------------------

@functools.lru_cache(maxsize=32)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix M, so that ``M @ v`` transforms ``v``."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    m[0] *= np.sqrt(1.0 / n)
    m[1:] *= np.sqrt(2.0 / n)
    m.setflags(write=False)
    return m


def dct1d(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise FeatureError("dct1d expects a non-empty vector")
    return dct_matrix(v.size) @ v


def dct2d(block) -> np.ndarray:
    """Separable 2D DCT-II: rows then columns. Result[k, l]: k vertical, l horizontal."""
    a = np.asarray(block, dtype=np.float64)
    rows = a @ dct_matrix(a.shape[1]).T
    return dct_matrix(a.shape[0]) @ rows


def ghs(block, n_bins: int = 64, value_range: tuple[float, float] | None = None,
        n_coef: int = 30) -> np.ndarray:
    """Global histogram shape: low-order DCT coefficients of the value histogram.

    Values outside ``value_range`` are clamped into the end bins. Without a
    range the block's own min/max is used, though callers normally pass the
    range of the whole source map so blocks stay comparable.
    """
    a = np.asarray(block, dtype=np.float64).ravel()
    if n_coef > n_bins:
        raise FeatureError(f"n_coef={n_coef} exceeds n_bins={n_bins}")
    lo, hi = (a.min(), a.max()) if value_range is None else value_range
    if not hi > lo:
        raise DegenerateRange(f"histogram range [{lo}, {hi}] is empty")
    idx = np.floor((a - lo) / (hi - lo) * n_bins).astype(np.int64)
    np.clip(idx, 0, n_bins - 1, out=idx)
    hist = np.bincount(idx, minlength=n_bins).astype(np.float64)
    hist /= hist.sum()
    return dct1d(hist)[:n_coef]


def sf(block, n: int = 8) -> np.ndarray:
    """Spatial frequencies: top-left n x n 2D DCT coefficients, row-major, DC included."""
    a = np.asarray(block, dtype=np.float64)
    if min(a.shape) < n:
        raise BlockTooSmall(f"SF needs at least {n}x{n} pixels, got {a.shape}")
    return dct2d(a)[:n, :n].ravel()


# --- LBP ---------------------------------------------------------------------

# Circular neighbour order starting top-left, clockwise: (dy, dx).
_LBP_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def _transitions(code: int) -> int:
    bits = [(code >> i) & 1 for i in range(8)]
    return sum(bits[i] != bits[(i + 1) % 8] for i in range(8))


def _build_uniform_lut() -> np.ndarray:
    lut = np.full(256, 58, dtype=np.int64)
    nxt = 0
    for code in range(256):
        if _transitions(code) <= 2:
            lut[code] = nxt
            nxt += 1
    assert nxt == 58
    return lut


LBP_UNIFORM_LUT = _build_uniform_lut()


def lbp_codes(block) -> np.ndarray:
    """8-bit LBP code of every interior pixel (bit i set when neighbour i >= centre)."""
    a = np.asarray(block, dtype=np.float64)
    h, w = a.shape
    if h < 3 or w < 3:
        raise BlockTooSmall(f"LBP needs at least 3x3 pixels, got {a.shape}")
    centre = a[1:-1, 1:-1]
    codes = np.zeros(centre.shape, dtype=np.int64)
    for bit, (dy, dx) in enumerate(_LBP_OFFSETS):
        nb = a[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
        codes |= (nb >= centre).astype(np.int64) << bit
    return codes


def lbp_histogram(block) -> np.ndarray:
    """59-bin uniform LBP histogram (58 uniform patterns + 1 pooled), sums to 1."""
    codes = lbp_codes(block)
    hist = np.bincount(LBP_UNIFORM_LUT[codes.ravel()], minlength=59).astype(np.float64)
    return hist / hist.sum()


# --- GLCM --------------------------------------------------------------------

GLCM_OFFSETS = ((1, 0), (0, 1), (1, 1), (1, -1))  # (dx, dy)


def quantize(block, n_levels: int) -> np.ndarray:
    a = np.asarray(block, dtype=np.float64)
    lo, hi = a.min(), a.max()
    if hi <= lo:
        return np.zeros(a.shape, dtype=np.int64)
    q = np.floor((a - lo) / (hi - lo) * n_levels).astype(np.int64)
    return np.clip(q, 0, n_levels - 1)


def glcm_matrix(q: np.ndarray, offset: tuple[int, int], n_levels: int) -> np.ndarray:
    """Symmetric, normalized co-occurrence matrix of a quantized block."""
    dx, dy = offset
    h, w = q.shape
    y0, y1 = max(0, -dy), min(h, h - dy)
    x0, x1 = max(0, -dx), min(w, w - dx)
    a = q[y0:y1, x0:x1].ravel()
    b = q[y0 + dy:y1 + dy, x0 + dx:x1 + dx].ravel()
    m = np.bincount(a * n_levels + b, minlength=n_levels * n_levels)
    m = m.reshape(n_levels, n_levels).astype(np.float64)
    m = m + m.T
    total = m.sum()
    return m / total if total > 0 else m


def haralick(p: np.ndarray) -> tuple[float, float, float, float]:
    """(contrast, correlation, energy, homogeneity); energy is the angular second moment."""
    n = p.shape[0]
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    contrast = float((p * (i - j) ** 2).sum())
    energy = float((p * p).sum())
    homogeneity = float((p / (1.0 + (i - j) ** 2)).sum())
    mu_i = (p * i).sum()
    mu_j = (p * j).sum()
    sd_i = np.sqrt((p * (i - mu_i) ** 2).sum())
    sd_j = np.sqrt((p * (j - mu_j) ** 2).sum())
    if sd_i < 1e-15 or sd_j < 1e-15:
        correlation = 0.0
    else:
        correlation = float((p * (i - mu_i) * (j - mu_j)).sum() / (sd_i * sd_j))
    return contrast, correlation, energy, homogeneity


def glcm_features(block, n_levels: int = 16) -> np.ndarray:
    if n_levels < 2:
        raise FeatureError("GLCM needs at least 2 grey levels")
    q = quantize(block, n_levels)
    out = []
    for off in GLCM_OFFSETS:
        out.extend(haralick(glcm_matrix(q, off, n_levels)))
    return np.array(out)


# --- HOG ---------------------------------------------------------------------

def hog_features(block, cell: int = 8, cells_per_block: int = 2, n_bins: int = 9,
                 clip: float = 0.2) -> np.ndarray:
    """HOG with unsigned orientations, hard binning and L2-Hys block normalization.

    Gradients are central differences; the outermost pixel ring has zero
    gradient.
    """
    a = np.asarray(block, dtype=np.float64)
    h, w = a.shape
    if h % cell or w % cell or h // cell < cells_per_block or w // cell < cells_per_block:
        raise GeometryMismatch(f"block {a.shape} incompatible with {cell}px cells")
    gx = np.zeros_like(a)
    gy = np.zeros_like(a)
    gx[:, 1:-1] = a[:, 2:] - a[:, :-2]
    gy[1:-1, :] = a[2:, :] - a[:-2, :]
    gx[[0, -1], :] = 0.0
    gy[:, [0, -1]] = 0.0
    mag = np.hypot(gx, gy)
    ang = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    bins = np.minimum((ang / (180.0 / n_bins)).astype(np.int64), n_bins - 1)

    ny, nx = h // cell, w // cell
    cell_idx = (np.arange(h)[:, None] // cell) * nx + (np.arange(w)[None, :] // cell)
    hist = np.bincount((cell_idx * n_bins + bins).ravel(), weights=mag.ravel(),
                       minlength=ny * nx * n_bins).reshape(ny, nx, n_bins)

    eps = 1e-12
    out = []
    cb = cells_per_block
    for by in range(ny - cb + 1):
        for bx in range(nx - cb + 1):
            v = hist[by:by + cb, bx:bx + cb].ravel()
            v = v / np.sqrt((v * v).sum() + eps * eps)
            v = np.minimum(v, clip)
            v = v / np.sqrt((v * v).sum() + eps * eps)
            out.append(v)
    return np.concatenate(out)


# --- datasets ----------------------------------------------------------------

def extract_family(name: str, pixels: np.ndarray, value_range=None) -> np.ndarray:
    if name == "ghs":
        return ghs(pixels, value_range=value_range)
    if name == "sf":
        return sf(pixels)
    if name == "lbp":
        return lbp_histogram(pixels)
    if name == "glcm":
        return glcm_features(pixels)
    if name == "hog":
        return hog_features(pixels)
    raise FeatureError(f"unknown feature family {name!r}; choose from {', '.join(FAMILIES)}")


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    layout: list = field(default_factory=list)  # (name, offset, length)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.X.shape[0]

    def column_names(self) -> list[str]:
        return [f"{name}_{i}" for name, _, length in self.layout for i in range(length)]

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.X[idx], self.y[idx], list(self.layout))

    def hstack(self, other: "LabeledDataset") -> "LabeledDataset":
        if not np.array_equal(self.y, other.y):
            raise InconsistentLengths("datasets disagree on row labels")
        off = self.n_features
        layout = self.layout + [(n, o + off, k) for n, o, k in other.layout]
        return LabeledDataset(np.hstack([self.X, other.X]), self.y.copy(), layout)


def map_value_range(grid: GridMap) -> tuple[float, float]:
    vals = grid.values[grid.valid]
    lo, hi = float(vals.min()), float(vals.max())
    if hi <= lo:
        # Flat map: any non-empty range puts every value in one bin.
        lo, hi = lo - 0.5, lo + 0.5
    return lo, hi


def assemble_dataset(blocks: list[Block], families, value_range=None,
                     prefix: str = "") -> LabeledDataset:
    """Concatenate the requested families per block, in the order given."""
    families = list(families)
    if not families:
        raise FeatureError("no feature families requested")
    if not blocks:
        raise EmptyDataset("no blocks to describe")
    if "ghs" in families and value_range is None:
        lo = min(float(b.pixels.min()) for b in blocks)
        hi = max(float(b.pixels.max()) for b in blocks)
        value_range = (lo, hi) if hi > lo else (lo - 0.5, lo + 0.5)
    rows = []
    lengths = None
    for blk in blocks:
        parts = [extract_family(f, blk.pixels, value_range) for f in families]
        ls = [len(p) for p in parts]
        if lengths is None:
            lengths = ls
        elif ls != lengths:
            raise InconsistentLengths(f"feature lengths {ls} differ from {lengths}")
        rows.append(np.concatenate(parts))
    layout = []
    off = 0
    for f, n in zip(families, lengths):
        layout.append((prefix + f, off, n))
        off += n
    y = np.array([0 if b.label is None else b.label for b in blocks], dtype=np.int64)
    return LabeledDataset(np.vstack(rows), y, layout)


def write_dataset_csv(path, data: LabeledDataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(data.column_names() + ["label"])
        for row, label in zip(data.X.tolist(), data.y.tolist()):
            w.writerow([repr(v) for v in row] + [label])


def read_dataset_csv(path) -> LabeledDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataset(f"{path}: empty file") from None
        if not header or header[-1] != "label":
            raise FeatureError(f"{path}: last column must be 'label'")
        rows, labels = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise InconsistentLengths(f"{path}:{lineno}: {len(rec)} fields, expected {len(header)}")
            try:
                rows.append([float(v) for v in rec[:-1]])
                labels.append(int(rec[-1]))
            except ValueError as exc:
                raise FeatureError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise EmptyDataset(f"{path}: no data rows")
    layout = []
    for col, name in enumerate(header[:-1]):
        family = name.rsplit("_", 1)[0]
        if layout and layout[-1][0] == family:
            n, o, k = layout[-1]
            layout[-1] = (n, o, k + 1)
        else:
            layout.append((family, col, 1))
    return LabeledDataset(np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64),
                          layout)
