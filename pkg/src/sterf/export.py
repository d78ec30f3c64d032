"""Plain-file outputs: CSV grids, 16-bit PGM heatmaps, JSON manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .errors import DomainError, SterfError


class OutputError(SterfError, OSError):
    pass


def _write_bytes(path, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from None


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def csv_text(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    for row in rows:
        writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_grid_csv(grid: np.ndarray, path) -> None:
    """Row-major H x W grid, one CSV record per image row."""
    _write_bytes(path, csv_text([[float(v) for v in row] for row in np.asarray(grid)]).encode())


def read_grid_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)], dtype=np.float64)


def write_temporal_csv(values: np.ndarray, path) -> None:
    """Rows ``tau,value`` for tau = 0..T-1."""
    _write_bytes(path, csv_text([[tau, float(v)] for tau, v in enumerate(values)]).encode())


def write_pgm(grid_norm: np.ndarray, path) -> None:
    """Binary P5, maxval 65535, big-endian samples; v -> round(v * 65535)."""
    g = np.asarray(grid_norm, dtype=np.float64)
    if g.ndim != 2:
        raise DomainError(f"PGM needs a 2-D grid, got shape {g.shape}")
    if g.size and (not np.isfinite(g).all() or g.min() < 0 or g.max() > 1):
        raise DomainError("PGM values must lie in [0, 1]")
    h, w = g.shape
    pixels = np.round(g * 65535).astype(">u2")
    _write_bytes(path, f"P5\n{w} {h}\n65535\n".encode("ascii") + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Minimal P5 reader returning the raw integer samples."""
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != b"P5":
        raise DomainError(f"{path}: not a binary PGM")
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(np.int64)


def write_json(obj, path) -> None:
    _write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
