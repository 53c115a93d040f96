"""Plain-text file formats: field snapshots, metric CSVs, polyline CSVs.

Snapshot files start with one header line ``nx ny lx ly t eps`` followed by
``nx`` lines of ``ny`` values each (row ``i`` holds the nodes with
``x = i hx``).  Numbers are written with ``%.17g`` so they round-trip.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
from pathlib import Path

import numpy as np

from .geometry import Polyline
from .numerics import Grid, ScalarField

_FMT = "%.17g"


def _num(x) -> str:
    x = float(x)
    return "nan" if math.isnan(x) else _FMT % x


def snapshot_text(u: ScalarField, t: float, eps: float) -> str:
    g = u.grid
    buf = io.StringIO()
    buf.write(f"{g.nx} {g.ny} {_num(g.lx)} {_num(g.ly)} {_num(t)} {_num(eps)}\n")
    np.savetxt(buf, u.values, fmt=_FMT, delimiter=" ")
    return buf.getvalue()


def write_snapshot(path, u: ScalarField, t: float, eps: float) -> Path:
    path = Path(path)
    path.write_text(snapshot_text(u, t, eps))
    return path


def read_snapshot(path) -> tuple[ScalarField, float, float]:
    """Inverse of :func:`write_snapshot`: ``(field, t, eps)``."""
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 6:
            raise ValueError(f"{path}: bad snapshot header")
        nx, ny = int(head[0]), int(head[1])
        lx, ly, t, eps = (float(v) for v in head[2:])
        vals = np.loadtxt(fh, ndmin=2)
    if vals.shape != (nx, ny):
        raise ValueError(f"{path}: expected {nx}x{ny} values, found {vals.shape}")
    return ScalarField(vals, Grid(nx, ny, lx, ly)), t, eps


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


POLYLINE_COLUMNS = ("t", "vertex", "x", "y")


def polyline_rows(t: float, lines: list[Polyline]):
    """Rows ``(t, vertex, x, y)``; the vertex index restarts at 0 for each curve
    and closed curves repeat their first vertex at the end."""
    for ln in lines:
        pts = np.vstack([ln.points, ln.points[:1]]) if ln.closed else ln.points
        for k, (x, y) in enumerate(pts):
            yield (float(t), k, float(x), float(y))


def write_polylines(path, frames) -> Path:
    """``frames`` is an iterable of ``(t, lines)``."""
    rows = [r for t, lines in frames for r in polyline_rows(t, lines)]
    return write_csv(path, POLYLINE_COLUMNS, rows)


def read_polylines(path) -> list[tuple[float, list[Polyline]]]:
    _, rows = read_csv(path)
    frames: list[tuple[float, list]] = []
    current: list = []
    t_cur = None

    def flush():
        if current:
            pts = np.array(current)
            closed = len(pts) > 3 and np.array_equal(pts[0], pts[-1])
            line = Polyline(pts[:-1] if closed else pts, closed)
            if frames and frames[-1][0] == t_cur:
                frames[-1][1].append(line)
            else:
                frames.append((t_cur, [line]))

    for t, k, x, y in rows:
        t, k = float(t), int(k)
        if k == 0 or t != t_cur:
            flush()
            current = []
            t_cur = t
        current.append((float(x), float(y)))
    flush()
    return frames


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
