"""Point cloud containers and PLY / XYZ / label file I/O.

Coordinates are millimetres throughout. Only the ``vertex`` element of a PLY
file is consumed or produced; colours, normals and faces are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SurfTopoError


class PointCloudError(SurfTopoError):
    pass


class MalformedHeader(PointCloudError):
    pass


class UnsupportedFormat(PointCloudError):
    pass


class MissingCoordinateProperty(PointCloudError):
    pass


class TruncatedBody(PointCloudError):
    pass


class ParseError(PointCloudError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NonFiniteCoordinate(PointCloudError):
    def __init__(self, index: int):
        super().__init__(f"non-finite coordinate at point index {index}")
        self.index = index


class EmptyCloud(PointCloudError):
    pass


@dataclass(frozen=True)
class PointCloud:
    """Immutable (P, 3) array of points in file order."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            if pts.size == 0:
                pts = pts.reshape(0, 3)
            else:
                raise PointCloudError(f"points must have shape (P, 3), got {pts.shape}")
        bad = ~np.isfinite(pts).all(axis=1)
        if bad.any():
            raise NonFiniteCoordinate(int(np.flatnonzero(bad)[0]))
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.count


def bounding_box(cloud: PointCloud) -> tuple[np.ndarray, np.ndarray]:
    if cloud.count == 0:
        raise EmptyCloud("bounding box of an empty cloud")
    return cloud.points.min(axis=0), cloud.points.max(axis=0)


# --- PLY -------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass
class _Element:
    name: str
    count: int
    props: list  # (name, dtype) or (name, count_dtype, item_dtype) for lists


def _read_ply_header(fh) -> tuple[str, list[_Element]]:
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise MalformedHeader("missing 'ply' magic")
    fmt = None
    elements: list[_Element] = []
    while True:
        raw = fh.readline()
        if not raw:
            raise MalformedHeader("missing end_header")
        line = raw.decode("ascii", errors="replace").strip()
        if not line or line.startswith(("comment", "obj_info")):
            continue
        tok = line.split()
        if tok[0] == "end_header":
            break
        if tok[0] == "format":
            if len(tok) < 2:
                raise MalformedHeader("bad format line")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3:
                raise MalformedHeader(f"bad element line: {line!r}")
            try:
                elements.append(_Element(tok[1], int(tok[2]), []))
            except ValueError:
                raise MalformedHeader(f"bad element count: {line!r}") from None
        elif tok[0] == "property":
            if not elements:
                raise MalformedHeader("property before any element")
            try:
                if tok[1] == "list":
                    elements[-1].props.append((tok[4], _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]]))
                else:
                    elements[-1].props.append((tok[2], _PLY_TYPES[tok[1]]))
            except (KeyError, IndexError):
                raise MalformedHeader(f"bad property line: {line!r}") from None
        else:
            raise MalformedHeader(f"unexpected header line: {line!r}")
    if fmt is None:
        raise MalformedHeader("missing format line")
    if fmt == "binary_big_endian":
        raise UnsupportedFormat("binary_big_endian PLY is not supported")
    if fmt not in ("ascii", "binary_little_endian"):
        raise MalformedHeader(f"unknown format {fmt!r}")
    return fmt, elements


def _coord_columns(vertex: _Element) -> list[int]:
    names = [p[0] for p in vertex.props]
    cols = []
    for axis in "xyz":
        if axis not in names:
            raise MissingCoordinateProperty(f"vertex element has no '{axis}' property")
        idx = names.index(axis)
        prop = vertex.props[idx]
        if len(prop) != 2 or prop[1][0] != "f":
            raise MissingCoordinateProperty(f"'{axis}' must be a float or double scalar")
        cols.append(idx)
    return cols


def load_ply(path) -> PointCloud:
    with open(path, "rb") as fh:
        fmt, elements = _read_ply_header(fh)
        names = [e.name for e in elements]
        if "vertex" not in names:
            raise MissingCoordinateProperty("no vertex element")
        vi = names.index("vertex")
        vertex = elements[vi]
        cols = _coord_columns(vertex)
        if any(len(p) != 2 for p in vertex.props):
            raise UnsupportedFormat("list properties on vertex element")

        if fmt == "ascii":
            for e in elements[:vi]:
                for _ in range(e.count):
                    if not fh.readline():
                        raise TruncatedBody(f"body ended inside element {e.name!r}")
            pts = np.empty((vertex.count, 3), dtype=np.float64)
            for i in range(vertex.count):
                raw = fh.readline()
                if not raw:
                    raise TruncatedBody(f"expected {vertex.count} vertices, got {i}")
                tok = raw.split()
                try:
                    pts[i] = [float(tok[c]) for c in cols]
                except (ValueError, IndexError):
                    raise TruncatedBody(f"vertex {i} is incomplete or malformed") from None
            return PointCloud(pts)

        for e in elements[:vi]:
            if any(len(p) != 2 for p in e.props):
                raise UnsupportedFormat(f"cannot skip list element {e.name!r} before vertex")
            size = np.dtype([(p[0], "<" + p[1]) for p in e.props]).itemsize * e.count
            if len(fh.read(size)) != size:
                raise TruncatedBody(f"body ended inside element {e.name!r}")
        dtype = np.dtype([(p[0], "<" + p[1]) for p in vertex.props])
        nbytes = dtype.itemsize * vertex.count
        buf = fh.read(nbytes)
        if len(buf) < nbytes:
            raise TruncatedBody(
                f"expected {vertex.count} vertices, got {len(buf) // dtype.itemsize}"
            )
        rec = np.frombuffer(buf, dtype=dtype, count=vertex.count)
        pts = np.column_stack([rec[vertex.props[c][0]].astype(np.float64) for c in cols])
        return PointCloud(pts.reshape(-1, 3))


def write_ply(path, cloud: PointCloud, binary: bool = True) -> None:
    """Write x, y, z as doubles. ASCII output uses shortest round-trip repr."""
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {cloud.count}\n"
        "property double x\nproperty double y\nproperty double z\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(cloud.points.astype("<f8").tobytes())
        else:
            fh.write("".join(
                f"{x!r} {y!r} {z!r}\n" for x, y, z in cloud.points.tolist()
            ).encode("ascii"))


# --- XYZ -------------------------------------------------------------------

def load_xyz(path) -> PointCloud:
    rows = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            tok = s.split()
            if len(tok) < 3:
                raise ParseError(lineno, f"expected at least 3 columns, got {len(tok)}")
            try:
                rows.append((float(tok[0]), float(tok[1]), float(tok[2])))
            except ValueError:
                raise ParseError(lineno, f"non-numeric token in {s!r}") from None
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3))


def write_xyz(path, cloud: PointCloud) -> None:
    with open(path, "w") as fh:
        for x, y, z in cloud.points.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")


def load_cloud(path) -> PointCloud:
    """Dispatch on file suffix (.ply, otherwise XYZ text)."""
    if Path(path).suffix.lower() == ".ply":
        return load_ply(path)
    return load_xyz(path)


# --- labels ----------------------------------------------------------------

def load_labels(path) -> np.ndarray:
    """One integer class id per line; 1 = natural surface, 2 = engraving."""
    out = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s:
                continue
            try:
                val = int(s)
            except ValueError:
                raise ParseError(lineno, f"label {s!r} is not an integer") from None
            if val not in (1, 2):
                raise ParseError(lineno, f"label {val} is not a class id (1 or 2)")
            out.append(val)
    return np.array(out, dtype=np.int8)


def write_labels(path, labels: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("".join(f"{int(v)}\n" for v in labels))

