"""Cloud file I/O: ascii xyz (default interchange format), binary
little-endian PLY, and grayscale PGM rasters for heatmap export.

xyz files carry one "x y z" triple per line, decimal notation, LF
newlines, printed with 9 significant digits so float32 coordinates
round-trip exactly.
"""

from __future__ import annotations

import struct

import numpy as np


class CloudFormatError(ValueError):
    pass


def write_xyz(path, points):
    points = np.asarray(points, dtype=np.float32)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for x, y, z in points:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_xyz(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise CloudFormatError(f"{path}:{lineno}: expected 3 values, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise CloudFormatError(f"{path}:{lineno}: non-numeric coordinate")
    if not rows:
        raise CloudFormatError(f"{path}: empty cloud file")
    return np.asarray(rows, dtype=np.float32)


PLY_HEADER = (
    "ply\nformat binary_little_endian 1.0\n"
    "element vertex {n}\n"
    "property float x\nproperty float y\nproperty float z\n"
    "end_header\n"
)


def write_ply(path, points):
    points = np.ascontiguousarray(np.asarray(points, dtype="<f4"))
    with open(path, "wb") as fh:
        fh.write(PLY_HEADER.format(n=points.shape[0]).encode("ascii"))
        fh.write(points.tobytes())


def read_ply(path):
    with open(path, "rb") as fh:
        header = b""
        while not header.endswith(b"end_header\n"):
            chunk = fh.readline()
            if not chunk:
                raise CloudFormatError(f"{path}: unterminated PLY header")
            header += chunk
        text = header.decode("ascii", errors="replace")
        if not text.startswith("ply"):
            raise CloudFormatError(f"{path}: not a PLY file")
        if "format binary_little_endian 1.0" not in text:
            raise CloudFormatError(f"{path}: only binary little-endian PLY is supported")
        n = None
        for line in text.splitlines():
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
        if n is None:
            raise CloudFormatError(f"{path}: missing vertex element")
        raw = fh.read(12 * n)
        if len(raw) != 12 * n:
            raise CloudFormatError(f"{path}: truncated vertex data")
        return np.frombuffer(raw, dtype="<f4").reshape(n, 3).astype(np.float32)


def read_cloud(path):
    path = str(path)
    if path.endswith(".ply"):
        return read_ply(path)
    return read_xyz(path)


def write_cloud(path, points):
    path = str(path)
    if path.endswith(".ply"):
        write_ply(path, points)
    else:
        write_xyz(path, points)


def write_pgm(path, values):
    """Write a per-point value vector as a square grayscale raster
    (ceil(sqrt(N)) per side, row-major, zero-padded), values scaled to
    0..255."""
    values = np.asarray(values, dtype=np.float64)
    side = int(np.ceil(np.sqrt(values.size)))
    grid = np.zeros(side * side)
    grid[:values.size] = values
    pix = np.clip(np.round(grid * 255), 0, 255).astype(int).reshape(side, side)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"P2\n{side} {side}\n255\n")
        for row in pix:
            fh.write(" ".join(str(v) for v in row) + "\n")
