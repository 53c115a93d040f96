"""Time stepping for the chemotaxis-growth system at finite eps.

    u_t = lap u - div(u grad chi(v)) + eps^-2 f_eps(u),   0 = lap v + u - gamma v

on a rectangle with homogeneous Neumann conditions.  Diffusion is treated
implicitly, chemotaxis and reaction explicitly; v is re-solved after every
step so every exposed state satisfies the elliptic constraint.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kinetics
from .analysis import NoInterfaceError, extract_interface, hausdorff, interface_length, layer_thickness
from .kinetics import BistableSpec, u0 as front
from .numerics import Grid, ScalarField, div_faces, face_average, helmholtz_residual, spectral_operator


class BlowUpError(RuntimeError):
    pass


class InterfaceMarginError(ValueError):
    pass


@dataclass(frozen=True)
class ChiSpec:
    """Sensitivity ``chi(v)``: ``k v`` (linear) or ``k v / (1 + v)`` (saturating)."""
    kind: str = "linear"
    k: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "saturating"):
            raise ValueError(f"unknown chi kind {self.kind!r}")
        if not self.k >= 0:
            raise ValueError("chi strength k must be nonnegative")

    def __call__(self, v):
        if self.kind == "linear":
            return self.k * v
        return self.k * v / (1.0 + v)

    def derivative(self, v):
        if self.kind == "linear":
            return np.full_like(np.asarray(v, dtype=float), self.k)
        return self.k / (1.0 + v) ** 2


@dataclass(frozen=True)
class ModelParams:
    eps: float
    alpha: float
    gamma: float
    grid: Grid
    chi: ChiSpec = ChiSpec()
    dt: float | None = None
    t_end: float = 0.1
    c0: float = 1.05
    d0: float | None = None
    upwind: bool = False

    EPS_MAX = 0.2
    DT_FACTOR = 0.2

    def __post_init__(self):
        if not 0 < self.eps <= self.EPS_MAX:
            raise ValueError(f"eps={self.eps} outside the asymptotic regime (0, {self.EPS_MAX}]")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        BistableSpec(self.alpha, self.c0)
        if self.dt is None:
            object.__setattr__(self, "dt", self.DT_FACTOR * self.eps**2)
        if not 0 < self.dt <= self.DT_FACTOR * self.eps**2 * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} violates dt <= {self.DT_FACTOR} eps^2")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if self.d0 is None:
            object.__setattr__(self, "d0", 0.1 * min(self.grid.lx, self.grid.ly))
        if not self.d0 > 0:
            raise ValueError("d0 must be positive")

    @property
    def spec(self) -> BistableSpec:
        return BistableSpec(self.alpha, self.c0)

    @property
    def generation_time(self) -> float:
        return kinetics.generation_time(self.eps)


@dataclass(frozen=True)
class DiffuseState:
    t: float
    u: ScalarField
    v: ScalarField
    steps: int = 0


# -- initial data ----------------------------------------------------------------------

def cutoff_values(s: np.ndarray, d0: float) -> np.ndarray:
    """Smooth increasing cutoff: identity for |s| <= 2 d0, +-3 d0 for |s| >= 3 d0.

    The blend ``2 d0 + d0 P(x)``, ``x = (|s| - 2 d0) / d0``, uses
    ``P(x) = x + 4x^3 - 7x^4 + 3x^5`` which matches value, slope and
    curvature at both ends and has ``P'(x) = (1 - x)^2 (1 + 2x + 15x^2) > 0``.
    """
    s = np.asarray(s, dtype=float)
    a = np.abs(s)
    x = np.clip((a - 2.0 * d0) / d0, 0.0, 1.0)
    blend = 2.0 * d0 + d0 * (x + x**3 * (4.0 + x * (-7.0 + 3.0 * x)))
    out = np.where(a <= 2.0 * d0, a, np.where(a >= 3.0 * d0, 3.0 * d0, blend))
    return np.copysign(out, s)


def circle_distance(grid: Grid, center, radius: float) -> ScalarField:
    X, Y = grid.mesh()
    return grid.field(np.hypot(X - center[0], Y - center[1]) - radius)


def check_margin(lines, grid: Grid, d0: float) -> float:
    """Distance from the interface to the boundary; must exceed ``4 d0``."""
    if not lines:
        raise InterfaceMarginError("initial data has no 1/2-level interface")
    pts = np.concatenate([ln.points for ln in lines])
    gap = float(np.min(np.minimum(np.minimum(pts[:, 0], grid.lx - pts[:, 0]),
                                  np.minimum(pts[:, 1], grid.ly - pts[:, 1]))))
    if not gap > 4.0 * d0:
        raise InterfaceMarginError(f"interface within {gap:.4g} of the boundary; need > 4*d0 = {4 * d0:.4g}")
    return gap


_EXPR_NAMES = {
    "x": None, "y": None, "pi": np.pi, "e": np.e,
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "tanh": np.tanh, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "hypot": np.hypot, "abs": np.abs, "minimum": np.minimum, "maximum": np.maximum,
    "where": np.where, "clip": np.clip, "arctan2": np.arctan2,
}


def eval_expression(expr: str, grid: Grid) -> np.ndarray:
    """Evaluate an arithmetic expression in ``x``, ``y`` on the grid nodes."""
    code = compile(expr, "<expression>", "eval")
    unknown = set(code.co_names) - set(_EXPR_NAMES)
    if unknown:
        raise ValueError(f"expression uses unknown names: {sorted(unknown)}")
    X, Y = grid.mesh()
    ns = dict(_EXPR_NAMES, x=X, y=Y)
    val = eval(code, {"__builtins__": {}}, ns)  # names restricted above
    return np.broadcast_to(np.asarray(val, dtype=float), grid.shape).copy()


def boundary_slope(values: np.ndarray, grid: Grid) -> float:
    """Largest one-sided normal difference quotient on the boundary."""
    return float(max(np.max(np.abs(values[1, :] - values[0, :])) / grid.hx,
                     np.max(np.abs(values[-1, :] - values[-2, :])) / grid.hx,
                     np.max(np.abs(values[:, 1] - values[:, 0])) / grid.hy,
                     np.max(np.abs(values[:, -1] - values[:, -2])) / grid.hy))


def initial_data(kind: str, params: ModelParams, *, center=None, radius: float = 0.25,
                 amplitude: float = 0.4, width: float = 0.1, expression: str | None = None,
                 flat_tol: float = 1e-10) -> ScalarField:
    """Initial ``u`` with a 1/2-level interface.

    ``prepared``: ``U0(zeta(d)/eps)`` for the circle ``d``.
    ``unprepared``: ``1/2 + amplitude * tanh(-zeta(d)/width)``.
    ``custom``: an expression in ``x``, ``y``.
    Here ``zeta`` is the distance cutoff, which makes both built-in kinds
    exactly flat near the boundary.
    """
    grid = params.grid
    if center is None:
        center = (0.5 * grid.lx, 0.5 * grid.ly)
    if kind in ("prepared", "unprepared"):
        if not radius > 0:
            raise ValueError("radius must be positive")
        gap = min(center[0] - radius, grid.lx - center[0] - radius, center[1] - radius, grid.ly - center[1] - radius)
        if not gap > 4.0 * params.d0:
            raise InterfaceMarginError(f"interface within {gap:.4g} of the boundary; need > 4*d0 = {4 * params.d0:.4g}")
        d = cutoff_values(circle_distance(grid, center, radius).values, params.d0)
        if kind == "prepared":
            vals = front(d / params.eps)
        else:
            if not 0 < amplitude <= 0.5 or not width > 0:
                raise ValueError("need 0 < amplitude <= 1/2 and width > 0")
            vals = 0.5 + amplitude * np.tanh(-d / width)
    elif kind == "custom":
        if not expression:
            raise ValueError("custom initial data needs an expression")
        vals = eval_expression(expression, grid)
        if not np.all(np.isfinite(vals)):
            raise ValueError("expression produced non-finite values")
        check_margin(extract_interface(grid.field(vals), 0.5), grid, params.d0)
    else:
        raise ValueError(f"unknown initial data kind {kind!r}")
    slope = boundary_slope(vals, grid)
    if slope > flat_tol:
        raise ValueError(f"initial data not flat at the boundary (normal slope {slope:.3g})")
    return grid.field(vals)


# -- stepping ----------------------------------------------------------------------

_GUARD = 0.5


def solve_v(u: ScalarField, gamma: float) -> ScalarField:
    """Elliptic constraint ``-lap v + gamma v = u`` (direct spectral solve)."""
    v = spectral_operator(u.grid, float(gamma)).solve(u.values)
    return ScalarField(v, u.grid)


def chemotaxis_divergence(u: np.ndarray, chi_v: np.ndarray, grid: Grid, upwind: bool = False) -> np.ndarray:
    """``div(u grad chi)`` in conservative face form (zero flux through the boundary)."""
    hx, hy = grid.hx, grid.hy
    gx = (chi_v[1:, :] - chi_v[:-1, :]) / hx
    gy = (chi_v[:, 1:] - chi_v[:, :-1]) / hy
    if upwind:
        ux = np.where(gx > 0, u[:-1, :], u[1:, :])
        uy = np.where(gy > 0, u[:, :-1], u[:, 1:])
    else:
        ux, _ = face_average(u)
        _, uy = face_average(u)
    return div_faces(ux * gx, uy * gy, hx, hy)


def initial_state(u: ScalarField, params: ModelParams) -> DiffuseState:
    if u.grid != params.grid:
        raise ValueError("initial field is not on the model grid")
    return DiffuseState(0.0, u, solve_v(u, params.gamma), 0)


def step(state: DiffuseState, params: ModelParams, dt: float | None = None) -> DiffuseState:
    """One IMEX step: backward Euler diffusion, explicit chemotaxis and reaction."""
    if dt is None:
        dt = params.dt
    if not 0 < dt <= params.dt * (1 + 1e-12):
        raise ValueError(f"dt={dt} outside (0, {params.dt}]")
    grid = params.grid
    u = state.u.values
    explicit = f_eps_scaled(u, params)
    if params.chi.k > 0:
        explicit = explicit - chemotaxis_divergence(u, params.chi(state.v.values), grid, params.upwind)
    rhs = u / dt + explicit
    u_new = spectral_operator(grid, 1.0 / dt).solve(rhs)
    lo, hi = float(u_new.min()), float(u_new.max())
    if not (lo >= -_GUARD and hi <= params.c0 + _GUARD) or not np.all(np.isfinite(u_new)):
        raise BlowUpError(f"blow-up guard tripped at t={state.t + dt:.6g}: u in [{lo:.4g}, {hi:.4g}]")
    u_f = ScalarField(u_new, grid)
    return DiffuseState(state.t + dt, u_f, solve_v(u_f, params.gamma), state.steps + 1)


def f_eps_scaled(u: np.ndarray, params: ModelParams) -> np.ndarray:
    return kinetics.f_eps(u, params.eps, params.spec) / params.eps**2


def constraint_residual(state: DiffuseState, gamma: float) -> float:
    g = state.u.grid
    return float(np.max(np.abs(helmholtz_residual(state.v.values, state.u.values, gamma, g.hx, g.hy))))


# -- runs -------------------------------------------------------------------------------

METRIC_COLUMNS = ("t", "eps", "hausdorff", "thickness", "min_u", "max_u", "interface_length")


@dataclass(frozen=True)
class MetricRecord:
    t: float
    eps: float
    hausdorff: float
    thickness: float
    min_u: float
    max_u: float
    interface_length: float

    def as_row(self) -> tuple:
        return tuple(getattr(self, c) for c in METRIC_COLUMNS)


@dataclass
class Trajectory:
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (t, u ScalarField, tag)
    final: DiffuseState | None = None

    def snapshot(self, tag: str) -> tuple[float, ScalarField]:
        for t, u, tg in self.snapshots:
            if tg == tag:
                return t, u
        raise KeyError(tag)


def measure(u: ScalarField, t: float, eps: float, reference=None, eta: float = 0.1) -> MetricRecord:
    """Metric record for one field; ``reference`` is a list of polylines or None."""
    lines = extract_interface(u, 0.5)
    try:
        thick = layer_thickness(u, eta)
    except NoInterfaceError:
        thick = math.nan
    dh = math.nan
    if reference is not None and lines:
        res = 0.25 * min(u.grid.hx, u.grid.hy)
        dh = hausdorff(lines, reference, res)
    return MetricRecord(float(t), float(eps), dh, thick, float(u.values.min()), float(u.values.max()),
                        interface_length(lines) if lines else 0.0)


def run(params: ModelParams, u0: ScalarField, probe_times=(), *, generation_probe: bool = True,
        reference=None, eta: float = 0.1, on_record=None, extra_stops=()) -> Trajectory:
    """Advance from ``u0`` to ``params.t_end``.

    The step size is shortened to land exactly on ``t_end``, on the
    generation time (when ``generation_probe``) and on ``extra_stops``.
    Other probe times are recorded at the nearest step boundary.
    ``reference(t)`` may return the limit interface at time t for the
    Hausdorff column.  ``on_record(t, state)`` is called at every record.
    """
    t_end = params.t_end
    probe_times = sorted(float(p) for p in probe_times)
    if any(p < 0 or p > t_end * (1 + 1e-12) for p in probe_times):
        raise ValueError("probe times must lie in [0, t_end]")
    stops = ({t_end} if t_end > 0 else set()) | {float(s) for s in extra_stops if 0 < s <= t_end}
    t_gen = params.generation_time
    if generation_probe and t_gen <= t_end:
        stops.add(t_gen)
    stops = sorted(stops)

    traj = Trajectory()
    state = initial_state(u0, params)

    def record(tag):
        ref = reference(state.t) if reference is not None else None
        traj.records.append(measure(state.u, state.t, params.eps, ref, eta))
        traj.snapshots.append((state.t, state.u, tag))
        if on_record is not None:
            on_record(tag, state)

    record("initial")
    dt = params.dt
    # probes within half a step of a landing time are recorded there
    pending = [p for p in probe_times if p > 0 and all(abs(p - s) > 0.5 * dt for s in stops)]
    for stop in stops:
        while state.t < stop:
            remaining = stop - state.t
            # absorb a tiny remainder instead of taking a sliver step
            h = remaining if remaining <= dt * (1 + 1e-9) else dt
            state = step(state, params, min(h, dt))
            if h == remaining:
                state = DiffuseState(stop, state.u, state.v, state.steps)
            while pending and abs(state.t - pending[0]) <= 0.5 * dt * (1 + 1e-9):
                pending.pop(0)
                record(f"probe@{state.t:.6g}")
        if generation_probe and stop == t_gen:
            record("generation")
        elif stop == t_end:
            record("final")
        elif traj.snapshots[-1][0] != state.t:
            record(f"stop@{state.t:.6g}")
    traj.final = state
    return traj
