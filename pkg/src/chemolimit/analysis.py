"""Interface extraction and the metrics used in convergence studies."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .geometry import Polyline, distance_to_polylines, extract_contours
from .numerics import ScalarField


class NoInterfaceError(ValueError):
    pass


def extract_interface(u: ScalarField, level: float = 0.5) -> list[Polyline]:
    """Marching-squares contours of ``u`` at ``level`` (empty list if none)."""
    g = u.grid
    return extract_contours(u.values, g.x, g.y, level)


def _as_lines(a) -> list[Polyline]:
    lines = [a] if isinstance(a, Polyline) else list(a)
    if not lines:
        raise NoInterfaceError("empty polyline set")
    return lines


def _default_resolution(lines) -> float:
    seg = np.concatenate([np.hypot(*(s[1] - s[0]).T) for s in (ln.segments() for ln in lines)])
    return 0.25 * float(np.median(seg))


def directed_distance(a, b, resolution: float | None = None) -> float:
    """``sup`` over ``a`` of the distance to ``b``."""
    la, lb = _as_lines(a), _as_lines(b)
    if resolution is None:
        resolution = min(_default_resolution(la), _default_resolution(lb))
    pts = np.concatenate([ln.refined(resolution) for ln in la])
    return float(np.max(distance_to_polylines(pts, lb)))


def hausdorff(a, b, resolution: float | None = None) -> float:
    """Symmetric Hausdorff distance between polylines (or lists of them).

    Both curves are refined to spacing ``resolution`` (pass ``h/4`` for grid
    data; the default is a quarter of the median segment length) and
    distances are exact point-to-segment distances.
    """
    la, lb = _as_lines(a), _as_lines(b)
    if resolution is None:
        resolution = min(_default_resolution(la), _default_resolution(lb))
    return max(directed_distance(la, lb, resolution), directed_distance(lb, la, resolution))


def interface_length(lines) -> float:
    return float(sum(ln.length() for ln in lines))


def _vertex_normals(line: Polyline) -> np.ndarray:
    """Unit normals pointing to the left of the polyline (the high side)."""
    p = line.points
    if line.closed:
        t = np.roll(p, -1, axis=0) - np.roll(p, 1, axis=0)
    else:
        t = np.gradient(p, axis=0)
    n = np.stack([-t[:, 1], t[:, 0]], axis=1)
    return n / np.hypot(*n.T)[:, None]


def _first_crossing(s: np.ndarray, vals: np.ndarray, valid: np.ndarray, target: float, upward: bool):
    """Position along each row where ``vals`` first reaches ``target``; nan if never."""
    hit = (vals >= target) if upward else (vals <= target)
    hit &= valid
    # stop searching once the line leaves the domain
    alive = np.cumprod(valid, axis=1).astype(bool)
    hit &= alive
    any_hit = hit.any(axis=1)
    k = np.argmax(hit, axis=1)
    out = np.full(len(vals), np.nan)
    rows = np.nonzero(any_hit & (k > 0))[0]
    k = k[rows]
    v0, v1 = vals[rows, k - 1], vals[rows, k]
    w = (target - v0) / (v1 - v0)
    out[rows] = s[k - 1] + w * (s[k] - s[k - 1])
    return out


def thickness_profile(u: ScalarField, eta: float, *, max_lines: int = 512, reach: float | None = None,
                      order: int = 3) -> np.ndarray:
    """Per-line distances between the ``1 - eta`` and ``eta`` crossings.

    Lines are normal to the extracted 1/2-contour, sampled at spacing h/4 up
    to ``reach`` on each side.  Lines that leave the domain or miss a
    crossing give nan.
    """
    if not 0 < eta < 0.25:
        raise ValueError("eta must lie in (0, 1/4)")
    g = u.grid
    lines = extract_interface(u, 0.5)
    if not lines:
        raise NoInterfaceError("no 1/2-level interface")
    if reach is None:
        reach = 0.25 * min(g.lx, g.ly)
    total = sum(len(ln) for ln in lines)
    stride = max(1, int(np.ceil(total / max_lines)))
    base = np.concatenate([ln.points for ln in lines])[::stride]
    normal = np.concatenate([_vertex_normals(ln) for ln in lines])[::stride]
    ds = 0.25 * min(g.hx, g.hy)
    s = np.arange(0.0, reach + ds, ds)
    px = base[:, :1] + normal[:, :1] * s
    py = base[:, 1:] + normal[:, 1:] * s
    qx = base[:, :1] - normal[:, :1] * s
    qy = base[:, 1:] - normal[:, 1:] * s

    def sample(x, y):
        valid = (x >= 0) & (x <= g.lx) & (y >= 0) & (y <= g.ly)
        coords = np.array([np.clip(x, 0, g.lx).ravel() / g.hx, np.clip(y, 0, g.ly).ravel() / g.hy])
        vals = map_coordinates(u.values, coords, order=order, mode="mirror").reshape(x.shape)
        return vals, valid

    up_vals, up_valid = sample(px, py)
    dn_vals, dn_valid = sample(qx, qy)
    s_high = _first_crossing(s, up_vals, up_valid, 1.0 - eta, upward=True)
    s_low = _first_crossing(s, dn_vals, dn_valid, eta, upward=False)
    return s_high + s_low


def layer_thickness(u: ScalarField, eta: float = 0.1, **kw) -> float:
    """Largest normal distance between the ``1 - eta`` and ``eta`` level crossings."""
    widths = thickness_profile(u, eta, **kw)
    widths = widths[np.isfinite(widths)]
    if widths.size == 0:
        raise NoInterfaceError("no sample line crosses both thresholds")
    return float(np.max(widths))


@dataclass(frozen=True)
class ConvergenceFit:
    slope: float
    intercept: float
    residual: float
    samples: tuple[tuple[float, float], ...]

    def predict(self, eps):
        return np.exp(self.intercept) * np.asarray(eps, dtype=float) ** self.slope


def fit_rate(samples) -> ConvergenceFit:
    """Least-squares line through ``(ln eps, ln metric)``.

    ``residual`` is the root-mean-square deviation in log space.
    """
    samples = tuple((float(e), float(m)) for e, m in samples)
    if len(samples) < 3:
        raise ValueError("need at least 3 samples")
    eps = np.array([e for e, _ in samples])
    met = np.array([m for _, m in samples])
    if np.any(eps <= 0) or len(np.unique(eps)) != len(eps):
        raise ValueError("eps values must be positive and distinct")
    if np.any(~(met > 0)):
        raise ValueError("metrics must be positive")
    x, y = np.log(eps), np.log(met)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return ConvergenceFit(float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))), samples)


@dataclass(frozen=True)
class GenerationReport:
    passed: bool
    global_ok: bool
    min_u: float
    max_u: float
    high_margin: float  # min of u - (1 - eta) over the high region (positive is good)
    low_margin: float  # min of eta - u over the low region
    high_nodes: int
    low_nodes: int
    failures: list = field(default_factory=list)


def generation_check(u: ScalarField, u0: ScalarField, eps: float, M0: float, eta: float = 0.1) -> GenerationReport:
    """Check the state reached after the generation time.

    Global bound ``-eta <= u <= 1 + eta``; ``u >= 1 - eta`` wherever
    ``u0 >= 1/2 + M0 eps`` and ``u <= eta`` wherever ``u0 <= 1/2 - M0 eps``.
    """
    if u.grid != u0.grid:
        raise ValueError("u and u0 live on different grids")
    a, b = u.values, u0.values
    lo, hi = float(a.min()), float(a.max())
    global_ok = lo >= -eta and hi <= 1.0 + eta
    high = b >= 0.5 + M0 * eps
    low = b <= 0.5 - M0 * eps
    high_margin = float(np.min(a[high] - (1.0 - eta))) if high.any() else np.inf
    low_margin = float(np.min(eta - a[low])) if low.any() else np.inf
    failures = []
    if not global_ok:
        failures.append(f"u range [{lo:.4g}, {hi:.4g}] leaves [{-eta}, {1 + eta}]")
    if high_margin < 0:
        failures.append(f"u below {1 - eta} in the high region by {-high_margin:.3g}")
    if low_margin < 0:
        failures.append(f"u above {eta} in the low region by {-low_margin:.3g}")
    return GenerationReport(not failures, global_ok, lo, hi, high_margin, low_margin,
                            int(high.sum()), int(low.sum()), failures)
