"""Polylines, marching squares and point-to-curve distances."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.spatial import cKDTree


@dataclass(frozen=True, eq=False)
class Polyline:
    points: np.ndarray  # (n, 2)
    closed: bool

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("points must have shape (n, 2)")
        if self.closed and len(pts) < 3:
            raise ValueError("closed polyline needs at least 3 vertices")
        if len(pts) < 2:
            raise ValueError("polyline needs at least 2 vertices")
        if np.any(np.all(np.diff(pts, axis=0) == 0.0, axis=1)):
            raise ValueError("consecutive vertices must be distinct")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        p = self.points
        if self.closed:
            return p, np.roll(p, -1, axis=0)
        return p[:-1], p[1:]

    def length(self) -> float:
        a, b = self.segments()
        return float(np.sum(np.hypot(*(b - a).T)))

    def signed_area(self) -> float:
        x, y = self.points.T
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def refined(self, resolution: float) -> np.ndarray:
        """Points along the polyline with spacing at most ``resolution``."""
        a, b = self.segments()
        seg = np.hypot(*(b - a).T)
        n = np.maximum(1, np.ceil(seg / resolution).astype(int))
        out = [a[k] + (b[k] - a[k]) * (np.arange(n[k])[:, None] / n[k]) for k in range(len(a))]
        if not self.closed:
            out.append(self.points[-1:])
        return np.concatenate(out)


def _dedupe(points: np.ndarray, closed: bool) -> np.ndarray:
    keep = np.ones(len(points), dtype=bool)
    keep[1:] = np.any(np.diff(points, axis=0) != 0.0, axis=1)
    pts = points[keep]
    if closed and len(pts) > 1 and np.all(pts[0] == pts[-1]):
        pts = pts[:-1]
    return pts


# -- marching squares -----------------------------------------------------------------

def _edge_point(edge, values, level, x, y):
    kind, i, j = edge
    if kind == 0:  # x-edge between (i, j) and (i+1, j)
        a, b = values[i, j], values[i + 1, j]
        t = (level - a) / (b - a)
        return x[i] + t * (x[i + 1] - x[i]), y[j]
    a, b = values[i, j], values[i, j + 1]
    t = (level - a) / (b - a)
    return x[i], y[j] + t * (y[j + 1] - y[j])


def contour_segments(values: np.ndarray, level: float):
    """Marching-squares segments as pairs of edge keys ``(kind, i, j)``.

    Nodes with ``value >= level`` count as high.  Saddle cells are split
    according to the average of the four corner values.
    """
    high = values >= level
    c0 = high[:-1, :-1]
    c1 = high[1:, :-1]
    c2 = high[1:, 1:]
    c3 = high[:-1, 1:]
    code = c0.astype(np.uint8) | (c1 << 1) | (c2 << 2) | (c3 << 3)
    cells = np.argwhere((code != 0) & (code != 15))
    center = 0.25 * (values[:-1, :-1] + values[1:, :-1] + values[1:, 1:] + values[:-1, 1:])
    segs = []
    for i, j in cells:
        b0, b1, b2, b3 = bool(c0[i, j]), bool(c1[i, j]), bool(c2[i, j]), bool(c3[i, j])
        e = ((0, i, j), (1, i + 1, j), (0, i, j + 1), (1, i, j))
        crossing = [b0 != b1, b1 != b2, b2 != b3, b3 != b0]
        if all(crossing):
            if (center[i, j] >= level) == b0:
                segs += [(e[0], e[1]), (e[2], e[3])]
            else:
                segs += [(e[3], e[0]), (e[1], e[2])]
        else:
            k = [n for n in range(4) if crossing[n]]
            segs.append((e[k[0]], e[k[1]]))
    return segs


def chain_segments(segs):
    """Join edge-keyed segments into ordered chains; returns ``[(keys, closed)]``."""
    adj: dict = {}
    for s, (a, b) in enumerate(segs):
        adj.setdefault(a, []).append(s)
        adj.setdefault(b, []).append(s)
    used = np.zeros(len(segs), dtype=bool)
    chains = []
    # open chains start at edges used by a single segment (domain boundary)
    starts = sorted(k for k, v in adj.items() if len(v) == 1) + sorted(adj)
    for start in starts:
        free = [s for s in adj[start] if not used[s]]
        if not free:
            continue
        keys = [start]
        cur = start
        closed = False
        while True:
            nxt = [s for s in adj[cur] if not used[s]]
            if not nxt:
                break
            s = nxt[0]
            used[s] = True
            a, b = segs[s]
            cur = b if a == cur else a
            if cur == start:
                closed = True
                break
            keys.append(cur)
        chains.append((keys, closed))
    return chains


def extract_contours(values: np.ndarray, x: np.ndarray, y: np.ndarray, level: float,
                     edge_point=None) -> list[Polyline]:
    """Level-``level`` contours of nodal data as oriented polylines.

    Every curve keeps the high side on its left.  Chains are started from
    the smallest edge key, so the vertex order is reproducible.
    """
    if edge_point is None:
        edge_point = _edge_point
    out = []
    for keys, closed in chain_segments(contour_segments(values, level)):
        pts = np.array([edge_point(k, values, level, x, y) for k in keys], dtype=float)
        pts = _dedupe(pts, closed)
        if closed and len(pts) < 3:
            continue
        if len(pts) < 2:
            continue
        line = Polyline(pts, closed)
        if _high_on_right(line, values, level, x, y):
            line = Polyline(pts[::-1].copy(), closed)
        out.append(line)
    return out


def _high_on_right(line: Polyline, values, level, x, y) -> bool:
    a, b = line.segments()
    k = int(np.argmax(np.hypot(*(b - a).T)))
    mid = 0.5 * (a[k] + b[k])
    t = b[k] - a[k]
    normal_right = np.array([t[1], -t[0]]) / np.hypot(*t)
    h = min(x[1] - x[0], y[1] - y[0])
    probe = mid + 0.5 * h * normal_right
    ci = np.interp(probe[0], x, np.arange(len(x)))
    cj = np.interp(probe[1], y, np.arange(len(y)))
    val = map_coordinates(values, [[ci], [cj]], order=1, mode="nearest")[0]
    return bool(val >= level)


# -- distances -----------------------------------------------------------------------------

def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from points ``p`` (n, 2) to segments ``a``-``b`` (n, 2), rowwise."""
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.where(denom > 0, np.einsum("ij,ij->i", p - a, ab) / np.where(denom > 0, denom, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(*(p - proj).T)


def distance_to_segments(points: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray) -> np.ndarray:
    """Exact distance from each point to the union of segments."""
    points = np.atleast_2d(points)
    mids = 0.5 * (seg_a + seg_b)
    half = 0.5 * np.max(np.hypot(*(seg_b - seg_a).T))
    tree = cKDTree(mids)
    near, idx = tree.query(points, k=1)
    # any segment closer than `near` has its midpoint within near + half
    cands = tree.query_ball_point(points, near + half + 1e-12)
    lens = np.fromiter((len(c) for c in cands), dtype=int, count=len(cands))
    rows = np.repeat(np.arange(len(points)), lens)
    cols = np.fromiter((c for cl in cands for c in cl), dtype=int, count=int(lens.sum()))
    d = point_segment_distance(points[rows], seg_a[cols], seg_b[cols])
    out = np.full(len(points), np.inf)
    np.minimum.at(out, rows, d)
    return out


def distance_to_polylines(points: np.ndarray, lines: list[Polyline]) -> np.ndarray:
    segs = [ln.segments() for ln in lines]
    a = np.concatenate([s[0] for s in segs])
    b = np.concatenate([s[1] for s in segs])
    return distance_to_segments(points, a, b)


def inside_polylines(points: np.ndarray, lines: list[Polyline]) -> np.ndarray:
    """Even-odd point-in-region test against the closed polylines."""
    inside = np.zeros(len(points), dtype=bool)
    px, py = points[:, 0], points[:, 1]
    for ln in lines:
        if not ln.closed:
            continue
        a, b = ln.segments()
        for (x1, y1), (x2, y2) in zip(a, b):
            crosses = (y1 > py) != (y2 > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                xc = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (px < xc)
    return inside
