"""Level-set solver for the limit free-boundary problem.

The interface is the zero set of a cutoff signed distance ``d`` (negative
inside).  On the band ``|d| < 2 d0`` it moves by

    d_t = lap d - grad d . grad chi(v0) - sqrt(2) alpha,

with ``-lap v0 + gamma v0 = 1{d < 0}``.  Periodic redistancing restores
the distance property that makes ``lap d`` the curvature term.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import interpolate
from scipy.integrate import solve_ivp
from scipy.spatial import cKDTree
from scipy.special import ive, kve

from .diffuse import ChiSpec, check_margin, circle_distance, cutoff_values
from .geometry import Polyline, extract_contours, inside_polylines, point_segment_distance
from .kinetics import SQRT2
from .numerics import Grid, ScalarField, grad, lap, solve_helmholtz_neumann


class InterfaceVanishedError(RuntimeError):
    pass


class CFLError(ValueError):
    pass


@dataclass(frozen=True)
class SharpParams:
    alpha: float
    gamma: float
    chi: ChiSpec = ChiSpec()
    d0: float = 0.1
    k_redist: int = 5
    dt_factor: float = 0.2

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("alpha must be nonnegative")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.d0 > 0:
            raise ValueError("d0 must be positive")
        if self.k_redist < 1:
            raise ValueError("k_redist must be at least 1")
        if not 0 < self.dt_factor <= 0.2:
            raise ValueError("dt_factor must lie in (0, 0.2]")

    def max_dt(self, grid: Grid) -> float:
        return self.dt_factor * min(grid.hx, grid.hy) ** 2


@dataclass(frozen=True, eq=False)
class LevelSetState:
    """Cutoff signed distance at time ``t``.

    ``v0`` (the elliptic solve against ``1{d < 0}``) is computed on first
    access and cached, so it always matches ``d``.
    """
    t: float
    d: ScalarField
    d0_radius: float
    gamma: float
    steps: int = 0

    @cached_property
    def v0(self) -> ScalarField:
        return solve_v0(self.d, self.gamma)

    def at(self, t: float) -> "LevelSetState":
        return LevelSetState(t, self.d, self.d0_radius, self.gamma, self.steps)


def cutoff(d_tilde: ScalarField, d0: float) -> ScalarField:
    """Apply the distance cutoff (identity near 0, plateau at +-3 d0)."""
    if not d0 > 0:
        raise ValueError("d0 must be positive")
    return d_tilde.with_values(cutoff_values(d_tilde.values, d0))


def step_field(d: ScalarField) -> ScalarField:
    """Indicator of the inside region ``{d < 0}``."""
    return d.with_values((d.values < 0).astype(float))


def solve_v0(d: ScalarField | LevelSetState, gamma: float, tol: float = 1e-10) -> ScalarField:
    if isinstance(d, LevelSetState):
        d = d.d
    return solve_helmholtz_neumann(step_field(d), gamma, tol, method="dct")


# -- redistancing ----------------------------------------------------------------------

def _cubic_edge_point(edge, values, level, x, y):
    """Zero on a grid edge from the cubic through four nodes along that line."""
    kind, i, j = edge
    if kind == 0:
        line, coord, k = values[:, j], x, i
    else:
        line, coord, k = values[i, :], y, j
    a, b = line[k], line[k + 1]
    t = (level - a) / (b - a)
    if 1 <= k and k + 2 < len(line):
        f = line[k - 1:k + 3] - level
        # Lagrange cubic on nodes -1, 0, 1, 2 in the local variable s
        def val(s):
            return (-f[0] * s * (s - 1) * (s - 2) / 6 + f[1] * (s + 1) * (s - 1) * (s - 2) / 2
                    - f[2] * (s + 1) * s * (s - 2) / 2 + f[3] * (s + 1) * s * (s - 1) / 6)

        def der(s):
            return (-f[0] * (3 * s * s - 6 * s + 2) / 6 + f[1] * (3 * s * s - 4 * s - 1) / 2
                    - f[2] * (3 * s * s - 2 * s - 2) / 2 + f[3] * (3 * s * s - 1) / 6)
        s = t
        for _ in range(4):
            ds = der(s)
            if ds == 0:
                break
            s -= val(s) / ds
        if 0.0 <= s <= 1.0 and np.isfinite(s):
            t = s
    pos = coord[k] + t * (coord[k + 1] - coord[k])
    return (pos, y[j]) if kind == 0 else (x[i], pos)


def zero_level_set(d: ScalarField) -> list[Polyline]:
    g = d.grid
    return extract_contours(d.values, g.x, g.y, 0.0, edge_point=_cubic_edge_point)


class _SplineCurve:
    """Interpolating cubic spline through contour vertices."""

    def __init__(self, line: Polyline, min_gap: float):
        pts = line.points
        keep = [0]
        for k in range(1, len(pts)):
            if np.hypot(*(pts[k] - pts[keep[-1]])) >= min_gap:
                keep.append(k)
        pts = pts[keep]
        if line.closed and len(pts) > 1 and np.hypot(*(pts[-1] - pts[0])) < min_gap:
            pts = pts[:-1]
        self.ok = len(pts) >= 5
        if not self.ok:
            return
        if line.closed:
            pts = np.vstack([pts, pts[:1]])
        self.tck, _ = interpolate.splprep([pts[:, 0], pts[:, 1]], s=0, per=int(line.closed), k=3)
        self.closed = line.closed

    def eval(self, s, der=0):
        s = np.mod(s, 1.0) if self.closed else np.clip(s, 0.0, 1.0)
        return np.array(interpolate.splev(s, self.tck, der=der)).T


def _dense_samples(curves: list[_SplineCurve], spacing: float) -> list[tuple[np.ndarray, bool]]:
    out = []
    for c in curves:
        coarse = c.eval(np.linspace(0.0, 1.0, 257))
        length = np.sum(np.hypot(*np.diff(coarse, axis=0).T))
        m = max(64, int(np.ceil(length / spacing)))
        out.append((c.eval(np.linspace(0.0, 1.0, m, endpoint=not c.closed)), c.closed))
    return out


def _sampled_distance(points: np.ndarray, curves, limit: float) -> np.ndarray:
    """Distance to densely sampled curves; inf beyond ``limit``.

    The nearest sample is found with a KD-tree and the distance is taken
    to the two sample segments meeting there.
    """
    chunks = []
    for pts, closed in curves:
        n = len(pts)
        k = np.arange(n)
        prev = (k - 1) % n if closed else np.maximum(k - 1, 0)
        nxt = (k + 1) % n if closed else np.minimum(k + 1, n - 1)
        chunks.append((pts, prev, nxt))
    offset = np.cumsum([0] + [len(c[0]) for c in chunks])
    allp = np.concatenate([c[0] for c in chunks])
    prev = np.concatenate([c[1] + o for c, o in zip(chunks, offset)])
    nxt = np.concatenate([c[2] + o for c, o in zip(chunks, offset)])
    near, idx = cKDTree(allp).query(points, distance_upper_bound=limit)
    out = np.full(len(points), np.inf)
    ok = np.isfinite(near)
    q = points[ok]
    i = idx[ok]
    a, b, c = allp[prev[i]], allp[i], allp[nxt[i]]
    chord = np.minimum(point_segment_distance(q, a, b), point_segment_distance(q, b, c))
    # chords cut inside a curved arc; measure to the circle through a, b, c instead
    center, radius = _circumcircle(a, b, c)
    arc = np.abs(np.hypot(*(q - center).T) - radius)
    curved = np.isfinite(radius) & (radius < 1e4 * np.hypot(*(c - a).T))
    out[ok] = np.where(curved, arc, chord)
    return out


def _circumcircle(a, b, c):
    ax, ay = (a - b).T
    cx, cy = (c - b).T
    den = 2.0 * (ax * cy - ay * cx)
    with np.errstate(divide="ignore", invalid="ignore"):
        a2, c2 = ax * ax + ay * ay, cx * cx + cy * cy
        ox = (cy * a2 - ay * c2) / den
        oy = (ax * c2 - cx * a2) / den
    center = b + np.column_stack([ox, oy])
    return center, np.hypot(ox, oy)


def redistance(d: ScalarField, band: float) -> ScalarField:
    """Signed distance to the zero level set of ``d``, cut off outside the band.

    The cutoff scale is ``d0 = band / 2``.  Contour vertices come from
    cubic interpolation along grid lines and are joined by interpolating
    cubic splines, sampled at spacing h/4 for the distance evaluation.
    The sign is taken from ``d``.
    """
    return _redistance(d, band, near_only=False)


def _redistance(d: ScalarField, band: float, near_only: bool) -> ScalarField:
    # near_only: d is already close to a distance, so only nodes with
    # |d| < 3 d0 + 2h can end up inside the cutoff ramp.
    if not band > 0:
        raise ValueError("band must be positive")
    g = d.grid
    lines = zero_level_set(d)
    if not lines:
        raise InterfaceVanishedError("interface vanished")
    d0 = 0.5 * band
    h = min(g.hx, g.hy)
    X, Y = g.mesh()
    vals = d.values
    sel = np.abs(vals) < 3.0 * d0 + 2.0 * h if near_only else np.ones(g.shape, dtype=bool)
    pts = np.column_stack([X[sel], Y[sel]])
    curves = _curve_samples(lines, h)
    limit = 3.0 * d0 + h
    dist = np.full(g.shape, limit)
    dist[sel] = np.minimum(_sampled_distance(pts, curves, limit), limit)
    out = np.copysign(dist, vals)
    out[vals == 0] = 0.0
    return d.with_values(cutoff_values(out, d0))


def _curve_samples(lines: list[Polyline], h: float):
    curves = []
    for ln in lines:
        c = _SplineCurve(ln, 0.3 * h)
        if c.ok:
            curves.append(_dense_samples([c], 0.25 * h)[0])
        else:
            curves.append((ln.refined(0.25 * h), ln.closed))
    return curves


def transfer_distance(state: "LevelSetState", grid: Grid, d0: float | None = None) -> ScalarField:
    """Cutoff signed distance to the zero set of ``state.d``, evaluated on another grid.

    The interface is the same spline reconstruction used by redistancing;
    the sign comes from an even-odd inside test, so the zero set must be
    made of closed curves.
    """
    if d0 is None:
        d0 = state.d0_radius
    lines = zero_level_set(state.d)
    if not lines:
        raise InterfaceVanishedError("interface vanished")
    if not all(ln.closed for ln in lines):
        raise ValueError("transfer_distance needs closed interface curves")
    h = min(state.d.grid.hx, state.d.grid.hy, grid.hx, grid.hy)
    X, Y = grid.mesh()
    pts = np.column_stack([X.ravel(), Y.ravel()])
    limit = 3.0 * d0 + h
    dist = np.minimum(_sampled_distance(pts, _curve_samples(lines, h), limit), limit)
    inside = inside_polylines(pts, lines)
    signed = np.where(inside, -dist, dist).reshape(grid.shape)
    return grid.field(cutoff_values(signed, d0))


# -- stepping ---------------------------------------------------------------------------

def initial_levelset(d_tilde: ScalarField, params: SharpParams, *, check: bool = True) -> LevelSetState:
    """State from a signed distance (or any function with the right zero set)."""
    if check:
        check_margin(zero_level_set(d_tilde), d_tilde.grid, params.d0)
    d = redistance(d_tilde, 2.0 * params.d0)
    return LevelSetState(0.0, d, params.d0, params.gamma, 0)


def circle_levelset(grid: Grid, params: SharpParams, radius: float, center=None) -> LevelSetState:
    if center is None:
        center = (0.5 * grid.lx, 0.5 * grid.ly)
    d = cutoff(circle_distance(grid, center, radius), params.d0)
    check_margin(zero_level_set(d), grid, params.d0)
    return LevelSetState(0.0, d, params.d0, params.gamma, 0)


def step_levelset(state: LevelSetState, dt: float, params: SharpParams) -> LevelSetState:
    """Explicit band update followed (every ``k_redist`` steps) by redistancing."""
    g = state.d.grid
    if not 0 < dt <= params.max_dt(g) * (1 + 1e-12):
        raise CFLError(f"CFL violation: dt={dt:.3g} exceeds {params.max_dt(g):.3g}")
    d = state.d.values
    rhs = lap(d, g.hx, g.hy) - SQRT2 * params.alpha
    if params.chi.k > 0:
        cx, cy = grad(params.chi(state.v0.values), g.hx, g.hy)
        speed = float(np.max(np.hypot(cx, cy)))
        if dt * speed > min(g.hx, g.hy):
            raise CFLError(f"CFL violation: drift speed {speed:.3g} too large for dt={dt:.3g}")
        gx, gy = grad(d, g.hx, g.hy)
        rhs -= gx * cx + gy * cy
    band = np.abs(d) < 2.0 * state.d0_radius
    new = np.where(band, d + dt * rhs, d)
    steps = state.steps + 1
    if not ((new < 0).any() and (new > 0).any()):
        raise InterfaceVanishedError(f"interface vanished at t={state.t + dt:.6g}")
    d_new = state.d.with_values(new)
    if steps % params.k_redist == 0:
        d_new = _redistance(d_new, 2.0 * state.d0_radius, near_only=True)
    return LevelSetState(state.t + dt, d_new, state.d0_radius, params.gamma, steps)


def advance(state: LevelSetState, t_target: float, params: SharpParams) -> LevelSetState:
    """Step until ``t_target``, shortening the last step to land on it."""
    dt = params.max_dt(state.d.grid)
    while state.t < t_target:
        h = min(dt, t_target - state.t)
        state = step_levelset(state, h, params)
        if t_target - state.t < 1e-12 * max(1.0, t_target):
            state = state.at(t_target)
    return state


def run_levelset(state: LevelSetState, times, params: SharpParams) -> list[LevelSetState]:
    """States at each of the (sorted) requested times."""
    out = []
    for t in sorted(times):
        state = advance(state, t, params)
        out.append(state)
    return out


def enclosed_radius(state_or_d) -> float:
    """Radius of the disc with the same area as the region ``{d < 0}``."""
    d = state_or_d.d if isinstance(state_or_d, LevelSetState) else state_or_d
    lines = zero_level_set(d)
    if not lines:
        raise InterfaceVanishedError("interface vanished")
    area = sum(abs(ln.signed_area()) for ln in lines if ln.closed)
    return float(np.sqrt(area / np.pi))


# -- radial reference ---------------------------------------------------------------------

def radial_v0(R: float, gamma: float, r_out: float):
    """``(v0(R), dv0/dr(R))`` for the unit disc source of radius R in a disc of radius r_out.

    Closed form in modified Bessel functions with a Neumann outer wall.
    """
    if not 0 < R < r_out:
        raise ValueError("need 0 < R < r_out")
    s = np.sqrt(gamma)
    x, xo = s * R, s * r_out
    # beta * I1(x)^2 etc. written with exponentially scaled Bessel functions
    ratio = kve(1, xo) / ive(1, xo) * np.exp(2.0 * (x - xo))
    i0, i1 = ive(0, x), ive(1, x)
    k0, k1 = kve(0, x), kve(1, x)
    v = (x / gamma) * (ratio * i1 * i0 + i1 * k0)
    dv = R * (ratio * i1 * i1 - i1 * k1)
    return float(v), float(dv)


@dataclass(frozen=True)
class RadialSolution:
    t: np.ndarray
    R: np.ndarray
    collapse_time: float | None


def radial_velocity(R: float, params: SharpParams, r_out: float) -> float:
    v, dv = radial_v0(R, params.gamma, r_out)
    return -1.0 / R + float(params.chi.derivative(v)) * dv + SQRT2 * params.alpha


def radial_oracle(R0: float, params: SharpParams, t_end: float, times=None, *, r_out: float,
                  rtol: float = 1e-10, r_min: float = 1e-4) -> RadialSolution:
    """Radius of a circular interface, ``R' = -1/R + chi'(v0) dv0/dr + sqrt(2) alpha``.

    ``r_out`` is the radius of the disc standing in for the domain (use the
    equal-area radius of the rectangle).  If R falls to ``r_min`` the
    collapse time is reported and later samples are nan.
    """
    if times is None:
        times = np.linspace(0.0, t_end, 101)
    times = np.asarray(times, dtype=float)

    def rhs(t, y):
        return [radial_velocity(y[0], params, r_out)]

    def collapse(t, y):
        return y[0] - r_min
    collapse.terminal = True
    collapse.direction = -1

    sol = solve_ivp(rhs, (0.0, t_end), [R0], method="DOP853", rtol=rtol, atol=1e-12 * R0,
                    t_eval=times, events=collapse, dense_output=True)
    R = np.full(times.shape, np.nan)
    R[:len(sol.t)] = sol.y[0]
    t_col = float(sol.t_events[0][0]) if len(sol.t_events[0]) else None
    return RadialSolution(times, R, t_col)


def equal_area_radius(grid: Grid) -> float:
    return float(np.sqrt(grid.lx * grid.ly / np.pi))
