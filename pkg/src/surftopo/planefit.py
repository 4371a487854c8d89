"""Total-least-squares support plane and orthographic projection onto it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SurfTopoError
from .pointcloud import PointCloud


class DegenerateCloud(SurfTopoError):
    pass


class NumericalFailure(SurfTopoError):
    pass


# Relative eigenvalue floor below which the in-plane spread counts as zero.
_COLLINEAR_RTOL = 1e-12


@dataclass(frozen=True)
class SupportPlane:
    centroid: np.ndarray
    normal: np.ndarray
    basis_u: np.ndarray
    basis_v: np.ndarray

    def to_dict(self) -> dict:
        return {k: [float(c) for c in getattr(self, k)]
                for k in ("centroid", "normal", "basis_u", "basis_v")}


@dataclass(frozen=True)
class ProjectedPoints:
    """In-plane coordinates (u, v) and signed distance d, one per input point."""

    u: np.ndarray
    v: np.ndarray
    d: np.ndarray

    def __len__(self) -> int:
        return self.d.shape[0]


def _orient(normal: np.ndarray) -> np.ndarray:
    # +z, then +y, then +x decides the sign.
    for axis in (2, 1, 0):
        if abs(normal[axis]) > 1e-12:
            return normal if normal[axis] > 0 else -normal
    return normal


def fit_support_plane(cloud: PointCloud) -> SupportPlane:
    """Fit the plane minimising summed squared perpendicular distances.

    The normal is the eigenvector of the point covariance with the smallest
    eigenvalue. The in-plane basis is anchored to the global x axis (y axis if
    the normal is parallel to x) so map orientation is reproducible.
    """
    pts = cloud.points
    if pts.shape[0] < 3:
        raise DegenerateCloud(f"need at least 3 points, got {pts.shape[0]}")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / pts.shape[0]
    try:
        evals, evecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(str(exc)) from exc
    if not np.all(np.isfinite(evals)):
        raise NumericalFailure("non-finite eigenvalues")
    if evals[1] <= _COLLINEAR_RTOL * max(evals[2], np.finfo(float).tiny):
        raise DegenerateCloud("points are collinear or coincident")

    normal = _orient(evecs[:, 0] / np.linalg.norm(evecs[:, 0]))
    basis_u = None
    for axis in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])):
        cand = axis - (axis @ normal) * normal
        norm = np.linalg.norm(cand)
        if norm > 1e-6:
            basis_u = cand / norm
            break
    # Re-orthogonalise against rounding so the 1e-12 invariants hold.
    basis_u = basis_u - (basis_u @ normal) * normal
    basis_u /= np.linalg.norm(basis_u)
    basis_v = np.cross(normal, basis_u)
    basis_v /= np.linalg.norm(basis_v)
    return SupportPlane(centroid, normal, basis_u, basis_v)


def signed_distance(plane: SupportPlane, p) -> float | np.ndarray:
    """Signed distance of a point (or (P, 3) array), positive on the normal side."""
    return (np.asarray(p, dtype=np.float64) - plane.centroid) @ plane.normal


def project_to_plane(cloud: PointCloud, plane: SupportPlane) -> ProjectedPoints:
    centered = cloud.points - plane.centroid
    return ProjectedPoints(
        u=centered @ plane.basis_u,
        v=centered @ plane.basis_v,
        d=centered @ plane.normal,
    )
