"""Point-cloud file I/O: ASCII XYZ and binary little-endian PLY.

Coordinates are stored as float32 in both formats, so a write/read round
trip is lossless at 32-bit precision. Malformed files raise
:class:`~pointadapt.errors.ParseError` with a line number (XYZ, PLY
header) or byte offset (PLY payload).
"""

from __future__ import annotations

import os

import numpy as np

from pointadapt.errors import InvalidInputError, ParseError
from pointadapt.geometry import as_cloud

_PLY_HEADER = (
    "ply\n"
    "format binary_little_endian 1.0\n"
    "element vertex {n}\n"
    "property float x\n"
    "property float y\n"
    "property float z\n"
    "end_header\n"
)


def write_cloud(cloud, path):
    """Write a cloud to ``path``; format chosen by extension (.xyz / .ply)."""
    cloud = as_cloud(cloud).astype(np.float32)
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".xyz":
        _write_xyz(cloud, path)
    elif ext == ".ply":
        _write_ply(cloud, path)
    else:
        raise InvalidInputError(f"unsupported cloud format {ext!r} (use .xyz or .ply)")


def read_cloud(path):
    """Read a cloud written by :func:`write_cloud`; returns float64 (n, 3)."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".xyz":
        return _read_xyz(path)
    if ext == ".ply":
        return _read_ply(path)
    raise InvalidInputError(f"unsupported cloud format {ext!r} (use .xyz or .ply)")


def _write_xyz(cloud, path):
    # 9 significant digits round-trips any float32 exactly
    with open(path, "w", encoding="ascii") as fh:
        for x, y, z in cloud:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def _read_xyz(path):
    points = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            parts = stripped.split()
            if len(parts) != 3:
                raise ParseError(
                    f"expected 3 coordinates, got {len(parts)}", path, line=lineno
                )
            try:
                points.append([np.float32(p) for p in parts])
            except ValueError:
                raise ParseError(f"bad float in {stripped!r}", path, line=lineno)
    if not points:
        raise ParseError("file contains no points", path)
    return np.asarray(points, dtype=np.float64)


def _write_ply(cloud, path):
    header = _PLY_HEADER.format(n=cloud.shape[0])
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(cloud, dtype="<f4").tobytes())


def _read_ply(path):
    with open(path, "rb") as fh:
        data = fh.read()
    # header is ascii lines terminated by end_header
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply"):
        raise ParseError("missing 'ply' magic", path, line=1)
    if end < 0:
        raise ParseError("unterminated header (no end_header)", path, offset=len(data))
    header_lines = data[:end].decode("ascii", errors="replace").splitlines()
    n_vertex = None
    fmt_ok = False
    props = []
    for lineno, line in enumerate(header_lines, start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1:2] != ["binary_little_endian"]:
                raise ParseError(
                    f"unsupported format {' '.join(parts[1:])!r} "
                    "(only binary_little_endian)",
                    path,
                    line=lineno,
                )
            fmt_ok = True
        elif parts[0] == "element":
            if parts[1] != "vertex":
                raise ParseError(f"unsupported element {parts[1]!r}", path, line=lineno)
            try:
                n_vertex = int(parts[2])
            except (IndexError, ValueError):
                raise ParseError("bad element vertex count", path, line=lineno)
        elif parts[0] == "property":
            props.append(tuple(parts[1:]))
    if not fmt_ok:
        raise ParseError("header missing format line", path)
    if n_vertex is None:
        raise ParseError("header missing element vertex line", path)
    if props != [("float", "x"), ("float", "y"), ("float", "z")]:
        raise ParseError(f"unsupported property layout {props}", path)
    if n_vertex < 1:
        raise ParseError("file contains no points", path)
    payload = data[end + len(b"end_header\n"):]
    expected = n_vertex * 12
    if len(payload) < expected:
        raise ParseError(
            f"truncated payload: expected {expected} bytes, got {len(payload)}",
            path,
            offset=len(data),
        )
    cloud = np.frombuffer(payload[:expected], dtype="<f4").reshape(n_vertex, 3)
    return cloud.astype(np.float64)
