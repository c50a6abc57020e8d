"""Point cloud and transform file I/O.

Supported readers: KITTI velodyne binary (x, y, z, intensity float32
little-endian; intensity discarded), ASCII XYZ, and PLY (ascii or
binary_little_endian with x/y/z vertex properties). The transform writer
emits a 4x4 homogeneous matrix as four rows of four decimals.
"""

import os
import struct

import numpy as np

from .cloud import PointCloud
from .pose import RigidTransform

__all__ = [
    "ParseError",
    "read_kitti_bin",
    "read_xyz",
    "read_ply",
    "read_point_cloud",
    "write_xyz",
    "write_transform",
    "read_transform",
]


class ParseError(ValueError):
    """Malformed input file; carries the byte offset of the failure."""

    def __init__(self, message, path, offset):
        super().__init__(f"{path}: {message} (byte offset {offset})")
        self.path = path
        self.offset = offset


def read_kitti_bin(path) -> PointCloud:
    size = os.path.getsize(path)
    if size % 16 != 0:
        raise ParseError("file size is not a multiple of 16-byte records", path, size - size % 16)
    data = np.fromfile(path, dtype="<f4").reshape(-1, 4)
    pts = data[:, :3].astype(np.float64)
    bad = ~np.isfinite(pts).all(axis=1)
    if bad.any():
        raise ParseError("non-finite coordinate", path, int(np.flatnonzero(bad)[0]) * 16)
    return PointCloud(pts)


def read_xyz(path) -> PointCloud:
    pts = []
    offset = 0
    with open(path, "rb") as fh:
        for raw in fh:
            line = raw.decode("ascii", errors="replace").strip()
            if line and not line.startswith("#"):
                fields = line.split()
                if len(fields) < 3:
                    raise ParseError("expected at least 3 coordinates per line", path, offset)
                try:
                    pts.append([float(fields[0]), float(fields[1]), float(fields[2])])
                except ValueError:
                    raise ParseError("non-numeric coordinate", path, offset) from None
            offset += len(raw)
    return PointCloud(np.asarray(pts, dtype=np.float64).reshape(-1, 3))


def write_xyz(path, cloud: PointCloud):
    with open(path, "w") as fh:
        for p in cloud.points:
            fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")


def read_ply(path) -> PointCloud:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"ply"):
        raise ParseError("missing 'ply' magic", path, 0)

    # parse header line by line
    offset = 0
    fmt = None
    n_vertices = None
    props = []  # (name, dtype) for the vertex element
    in_vertex = False
    end = None
    while True:
        nl = data.find(b"\n", offset)
        if nl < 0:
            raise ParseError("unterminated header", path, offset)
        line = data[offset:nl].decode("ascii", errors="replace").strip()
        line_off = offset
        offset = nl + 1
        if line == "end_header":
            end = offset
            break
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "format":
            if tokens[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unsupported format '{tokens[1]}'", path, line_off)
            fmt = tokens[1]
        elif tokens[0] == "element":
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                n_vertices = int(tokens[2])
        elif tokens[0] == "property" and in_vertex:
            props.append((tokens[2], tokens[1]))
    if fmt is None or n_vertices is None:
        raise ParseError("header missing format or vertex element", path, 0)

    names = [name for name, _ in props]
    for coord in ("x", "y", "z"):
        if coord not in names:
            raise ParseError(f"vertex element lacks '{coord}' property", path, end)

    type_map = {
        "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
        "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
        "short": "<i2", "ushort": "<u2", "int": "<i4", "int32": "<i4",
        "uint": "<u4", "uint32": "<u4",
    }
    if fmt == "ascii":
        text = data[end:].decode("ascii", errors="replace").split("\n")
        pts = np.zeros((n_vertices, 3))
        row_off = end
        row = 0
        for line in text:
            stripped = line.strip()
            if stripped:
                fields = stripped.split()
                if len(fields) < len(props):
                    raise ParseError("short vertex row", path, row_off)
                try:
                    for j, coord in enumerate(("x", "y", "z")):
                        pts[row, j] = float(fields[names.index(coord)])
                except ValueError:
                    raise ParseError("non-numeric vertex value", path, row_off) from None
                row += 1
                if row == n_vertices:
                    break
            row_off += len(line) + 1
        if row < n_vertices:
            raise ParseError(f"expected {n_vertices} vertices, found {row}", path, len(data))
        return PointCloud(pts)

    try:
        dtype = np.dtype([(name, type_map[t]) for name, t in props])
    except KeyError as exc:
        raise ParseError(f"unsupported property type {exc}", path, end) from None
    need = n_vertices * dtype.itemsize
    if len(data) - end < need:
        raise ParseError("truncated binary vertex data", path, len(data))
    records = np.frombuffer(data, dtype=dtype, count=n_vertices, offset=end)
    pts = np.stack(
        [records["x"], records["y"], records["z"]], axis=1
    ).astype(np.float64)
    return PointCloud(pts)


_READERS = {
    "kitti-bin": read_kitti_bin,
    "xyz": read_xyz,
    "ply": read_ply,
}


def read_point_cloud(path, fmt=None) -> PointCloud:
    """Read a cloud, inferring the format from the extension if not given."""
    if fmt is None:
        ext = os.path.splitext(path)[1].lower()
        fmt = {".bin": "kitti-bin", ".xyz": "xyz", ".txt": "xyz", ".ply": "ply"}.get(ext)
        if fmt is None:
            raise ValueError(f"cannot infer point cloud format from '{path}'")
    if fmt not in _READERS:
        raise ValueError(f"unknown format '{fmt}'")
    return _READERS[fmt](path)


def write_transform(path, transform: RigidTransform):
    mat = transform.as_matrix()
    with open(path, "w") as fh:
        for row in mat:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def read_transform(path) -> RigidTransform:
    rows = []
    offset = 0
    with open(path, "rb") as fh:
        for raw in fh:
            line = raw.decode("ascii", errors="replace").strip()
            if line:
                fields = line.split()
                if len(fields) != 4:
                    raise ParseError("expected 4 values per row", path, offset)
                try:
                    rows.append([float(v) for v in fields])
                except ValueError:
                    raise ParseError("non-numeric matrix entry", path, offset) from None
            offset += len(raw)
    if len(rows) != 4:
        raise ParseError(f"expected 4 rows, got {len(rows)}", path, offset)
    return RigidTransform.from_matrix(np.asarray(rows))
