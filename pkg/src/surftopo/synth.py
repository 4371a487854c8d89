"""Synthetic engraved surfaces with exact per-point ground truth.

A surface is a jittered grid of height samples: a slow sinusoidal
undulation, minus half-cosine grooves stamped along random polylines, plus
Gaussian roughness and sparse symmetric outliers. Points inside a groove
footprint are class 2, everything else class 1.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import SurfTopoError
from .planefit import SupportPlane, project_to_plane
from .pointcloud import PointCloud
from .raster import DEFAULT_MAX_CELLS, GridMap, fill_holes, grid_cells

MAX_STROKES = 10_000
COVERAGE_TOL = 0.02


class InfeasibleCoverage(SurfTopoError):
    pass


@dataclass(frozen=True)
class SynthParams:
    extent_mm: tuple[float, float] = (20.0, 20.0)
    sample_spacing: float = 0.05
    curvature_amp: float = 5.0
    groove_depth: float = 0.5
    groove_width: float = 4.0
    roughness_sigma: float = 0.02
    outlier_fraction: float = 0.001
    outlier_amp: float = 2.0
    target_minority_fraction: float = 0.166
    seed: int = 0
    n_grooves: int | None = None  # None: add strokes until the coverage target is met

    def __post_init__(self):
        ex, ey = self.extent_mm
        if ex <= 0 or ey <= 0 or self.sample_spacing <= 0:
            raise SurfTopoError("extent and sample spacing must be positive")
        for name in ("curvature_amp", "groove_depth", "roughness_sigma", "outlier_amp"):
            if getattr(self, name) < 0:
                raise SurfTopoError(f"{name} must be non-negative")
        if self.groove_width <= 0:
            raise SurfTopoError("groove_width must be positive")
        if not 0 <= self.outlier_fraction < 1 or not 0 <= self.target_minority_fraction < 1:
            raise SurfTopoError("fractions must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["extent_mm"] = list(self.extent_mm)
        return d


@dataclass
class LabeledCloud:
    cloud: PointCloud
    labels: np.ndarray
    # Generator internals useful for assertions; not part of any file format.
    groove_distance: np.ndarray | None = field(default=None, repr=False)
    strokes: list = field(default_factory=list, repr=False)


def _segment_distance(px, py, a, b):
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.hypot(px - a[0], py - a[1])
    t = ((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom
    np.clip(t, 0.0, 1.0, out=t)
    return np.hypot(px - (a[0] + t * ab[0]), py - (a[1] + t * ab[1]))


def _polyline_distance(px, py, verts):
    d = np.full(px.shape, np.inf)
    for a, b in zip(verts[:-1], verts[1:]):
        np.minimum(d, _segment_distance(px, py, a, b), out=d)
    return d


def _random_stroke(rng, extent, width):
    ex, ey = extent
    n_seg = int(rng.integers(1, 4))
    start = np.array([rng.uniform(0, ex), rng.uniform(0, ey)])
    heading = rng.uniform(0, 2 * np.pi)
    verts = [start]
    for _ in range(n_seg):
        heading += rng.uniform(-np.pi / 4, np.pi / 4)
        length = rng.uniform(0.25, 1.0) * width
        verts.append(verts[-1] + length * np.array([np.cos(heading), np.sin(heading)]))
    return np.array(verts)


def generate_surface(params: SynthParams) -> LabeledCloud:
    ex, ey = params.extent_mm
    w = params.groove_width
    grooves_wanted = params.n_grooves != 0 and params.target_minority_fraction > 0
    if grooves_wanted and min(ex, ey) < 4 * w:
        raise InfeasibleCoverage(
            f"extent {ex}x{ey} mm is below 4x the groove width ({4 * w} mm)")

    rng = np.random.default_rng(params.seed)
    s = params.sample_spacing
    nx = int(np.floor(ex / s)) + 1
    ny = int(np.floor(ey / s)) + 1
    gx, gy = np.meshgrid(np.arange(nx) * s, np.arange(ny) * s)
    px = (gx + rng.uniform(-0.4 * s, 0.4 * s, gx.shape)).ravel()
    py = (gy + rng.uniform(-0.4 * s, 0.4 * s, gy.shape)).ravel()

    # Base undulation: wavelengths between one and two extents per axis.
    lam = rng.uniform(1.0, 2.0, 2) * np.array([ex, ey])
    phase = rng.uniform(0, 2 * np.pi, 2)
    z = params.curvature_amp * 0.5 * (np.sin(2 * np.pi * px / lam[0] + phase[0])
                                      + np.sin(2 * np.pi * py / lam[1] + phase[1]))

    dist = np.full(px.shape, np.inf)
    strokes = []
    if grooves_wanted:
        n_points = px.size
        half = 0.5 * w
        if params.n_grooves is not None:
            for _ in range(params.n_grooves):
                verts = _random_stroke(rng, (ex, ey), w)
                np.minimum(dist, _polyline_distance(px, py, verts), out=dist)
                strokes.append(verts)
        else:
            target = params.target_minority_fraction
            covered = 0.0
            for _ in range(MAX_STROKES):
                if covered >= target - COVERAGE_TOL:
                    break
                verts = _random_stroke(rng, (ex, ey), w)
                cand = np.minimum(dist, _polyline_distance(px, py, verts))
                frac = np.count_nonzero(cand < half) / n_points
                if frac <= target + COVERAGE_TOL and frac > covered:
                    dist, covered = cand, frac
                    strokes.append(verts)
            else:
                raise InfeasibleCoverage(
                    f"coverage {covered:.3f} short of {target:.3f} after {MAX_STROKES} strokes")
        inside = dist < half
        z[inside] -= params.groove_depth * np.cos(np.pi * dist[inside] / w)

    if params.roughness_sigma > 0:
        z += rng.normal(0.0, params.roughness_sigma, z.shape)
    n_out = int(round(params.outlier_fraction * z.size))
    if n_out:
        idx = rng.choice(z.size, size=n_out, replace=False)
        z[idx] += rng.uniform(-params.outlier_amp, params.outlier_amp, n_out)

    labels = np.where(dist < 0.5 * w, 2, 1).astype(np.int8)
    cloud = PointCloud(np.column_stack([px, py, z]))
    return LabeledCloud(cloud, labels, dist, strokes)


def rasterize_labels(labeled: LabeledCloud, plane: SupportPlane, pixel_size: float,
                     max_cells: int = DEFAULT_MAX_CELLS) -> GridMap:
    """Per-cell majority label on the same grid as :func:`raster.rasterize`.

    Ties (half class 2) resolve to class 2. Empty cells are invalid.
    """
    proj = project_to_plane(labeled.cloud, plane)
    h, w, ou, ov, flat = grid_cells(proj.u, proj.v, pixel_size, max_cells)
    n = h * w
    counts = np.bincount(flat, minlength=n)
    n2 = np.bincount(flat, weights=(labeled.labels == 2).astype(np.float64),
                     minlength=n)
    valid = counts > 0
    values = np.where(valid, np.where(2 * n2 >= counts, 2.0, 1.0), 0.0)
    return GridMap(values.reshape(h, w), valid.reshape(h, w), float(pixel_size), ou, ov)


def fill_label_holes(labels: GridMap, max_rounds: int = 64) -> GridMap:
    """Fill empty label cells by neighbour majority (mean of 1/2 ids, rounded up at 1.5)."""
    filled, _ = fill_holes(labels, max_rounds)
    vals = np.where(filled.valid, np.where(filled.values >= 1.5, 2.0, 1.0), 0.0)
    return filled.with_values(vals, filled.valid)


def write_manifest(path, params: SynthParams, n_points: int, minority_fraction: float) -> None:
    doc = {"generator": "surftopo.synth", "params": params.to_dict(),
           "n_points": n_points, "minority_fraction": minority_fraction}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
