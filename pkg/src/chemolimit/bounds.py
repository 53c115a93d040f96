"""Computable sub/super-solution envelopes and their constants.

Two families bracket the solution of the finite-eps system:

* generation envelopes, built from the perturbed ODE flow,
  ``w_pm(x, t) = Y(t/eps^2, u0(x) pm eps^2 r(pm eps G, t/eps^2); pm eps G)``
  with ``r(delta, tau) = C6 (exp(mu(delta) tau) - 1)``, valid up to the
  generation time;
* motion envelopes, shifted front profiles around the limit interface,
  ``U0((d -+ eps p)/eps) +- q`` with
  ``p = -exp(-beta t/eps^2) + exp(L t) + K`` and ``q = sigma eps^2 p'``.

The proofs only assert that the constants exist; here they are computed
where a formula exists and calibrated against runs otherwise.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq, minimize_scalar

from .kinetics import (DELTA_MAX, MU, SQRT2, BistableSpec, RootsCoalesceError, f, f_prime, f_second, flow_Y,
                       generation_time, mu_of_delta, perturbed_roots, u0, u0_inverse, u0_prime)
from .numerics import ScalarField


class AdmissibilityError(ValueError):
    pass


class EnvelopeWindowError(ValueError):
    pass


class CalibrationError(RuntimeError):
    pass


# -- generation -----------------------------------------------------------------------

@dataclass(frozen=True)
class GenerationConstants:
    G: float
    C6: float = 1.0
    mu: float = MU
    c0: float = 1.05

    def __post_init__(self):
        if not self.C6 > 0:
            raise ValueError("C6 must be positive")

    def with_C6(self, C6: float) -> "GenerationConstants":
        return GenerationConstants(self.G, C6, self.mu, self.c0)


def generation_constants(spec: BistableSpec, C6: float = 1.0) -> GenerationConstants:
    """``G = sup |g|`` over ``[-2 c0, 2 c0]``.

    ``|u(1-u)|`` is convex away from ``u = 1/2`` so the sup sits at an end
    point or at the interior maximum ``1/4``.
    """
    a = 2.0 * spec.c0
    G = spec.alpha * max(abs(-a * (1.0 + a)), abs(a * (1.0 - a)), 0.25)
    return GenerationConstants(float(G), C6, MU, spec.c0)


def growth_r(delta: float, tau, C6: float):
    return C6 * np.expm1(mu_of_delta(delta) * np.asarray(tau, dtype=float))


_TABLE_SIZE = 16385
_DIRECT_LIMIT = 4096


def _flow_on(tau: float, xi: np.ndarray, delta: float) -> np.ndarray:
    """``flow_Y`` on many values, through a spline table when there are many distinct ones."""
    uniq = np.unique(xi)
    if len(uniq) <= _DIRECT_LIMIT:
        return flow_Y(tau, xi, delta)
    lo, hi = float(uniq[0]), float(uniq[-1])
    pad = 1e-9 * max(1.0, hi - lo)
    nodes = np.linspace(lo - pad, hi + pad, _TABLE_SIZE)
    table = flow_Y(tau, nodes, delta)
    return CubicSpline(nodes, table)(xi)


def generation_envelope(u_init: ScalarField, t: float, eps: float, consts: GenerationConstants):
    """Lower and upper generation envelopes at time ``t <= t_eps``."""
    t_gen = generation_time(eps)
    if t < 0 or t > t_gen * (1 + 1e-12):
        raise ValueError(f"t={t:.6g} outside [0, generation time {t_gen:.6g}]")
    delta = eps * consts.G
    if delta >= DELTA_MAX:
        raise RootsCoalesceError(f"roots coalesce: eps*G={delta:.4g} >= {DELTA_MAX:.4g}")
    if t == 0:
        return u_init, u_init
    tau = t / eps**2
    bound = 2.0 * consts.c0
    out = []
    for sign in (-1.0, 1.0):
        shift = sign * eps**2 * float(growth_r(sign * delta, tau, consts.C6))
        xi = u_init.values + shift
        if np.any(np.abs(xi) >= bound):
            raise AdmissibilityError(f"shifted data leaves (-2c0, 2c0) = ({-bound}, {bound})")
        out.append(u_init.with_values(_flow_on(tau, xi, sign * delta)))
    return out[0], out[1]


# -- motion -----------------------------------------------------------------------------

@dataclass(frozen=True)
class MotionConstants:
    eta: float
    m: float
    b: float
    a1: float
    F: float
    beta: float
    sigma: float
    K: float
    L: float
    d0: float
    T: float
    eps0: float

    def p(self, t, eps):
        t = np.asarray(t, dtype=float)
        return -np.exp(-self.beta * t / eps**2) + np.exp(self.L * t) + self.K

    def p_t(self, t, eps):
        t = np.asarray(t, dtype=float)
        return self.beta / eps**2 * np.exp(-self.beta * t / eps**2) + self.L * np.exp(self.L * t)

    def q(self, t, eps):
        t = np.asarray(t, dtype=float)
        return self.sigma * (self.beta * np.exp(-self.beta * t / eps**2) + eps**2 * self.L * np.exp(self.L * t))

    def window(self, eps: float) -> tuple[float, float]:
        """``(exp(L T) + K, d0 / (2 eps))``; the first must not exceed the second."""
        return math.exp(self.L * self.T) + self.K, self.d0 / (2.0 * eps)

    def with_K(self, K: float, eps: float | None = None) -> "MotionConstants":
        return _assemble(self.eta, self.m, self.b, self.a1, self.F, K, self.d0, self.T,
                         self.eps0 if eps is None else eps)


def _sup_F() -> float:
    """``sup over [-1, 2]`` of ``|f| + |f'| + |f''|`` (dense sampling, then local refinement)."""
    def total(z):
        return abs(f(z)) + abs(f_prime(z)) + abs(f_second(z))
    zs = np.linspace(-1.0, 2.0, 30001)
    vals = total(zs)
    k = int(np.argmax(vals))
    best = float(vals[k])
    lo, hi = zs[max(k - 1, 0)], zs[min(k + 1, len(zs) - 1)]
    res = minimize_scalar(lambda z: -total(z), bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    return max(best, float(-res.fun), float(total(-1.0)), float(total(2.0)))


def _assemble(eta, m, b, a1, F, K, d0, T, eps0) -> MotionConstants:
    beta = m / 4.0
    sigma = min(a1 / (m + F), 1.0 / (beta + 1.0), 4.0 * beta / (F * (beta + 1.0)), eta / (3.0 * beta))
    if not d0 > 4.0 * eps0:
        raise EnvelopeWindowError(f"need d0 > 4 eps0 for a positive L (d0={d0}, eps0={eps0})")
    L = math.log(d0 / (4.0 * eps0)) / T
    return MotionConstants(eta, m, b, a1, F, beta, sigma, K, L, d0, T, eps0)


def derive_motion_constants(eta: float, *, K: float = 2.0, d0: float = 0.1, T: float = 0.1,
                            eps0: float = 0.02) -> MotionConstants:
    """Constants of the motion envelopes for a given ``eta``.

    ``b = eta``; ``m`` is the smallest ``-f'`` on ``[0, b] u [1-b, 1]``;
    ``a1`` the smallest ``-U0'`` where ``U0 in [b, 1-b]``; ``F`` the sup of
    ``|f| + |f'| + |f''|`` on ``[-1, 2]``; ``beta = m/4``; ``sigma`` the
    minimum of ``a1/(m+F)``, ``1/(beta+1)``, ``4 beta/(F (beta+1))`` and
    ``eta/(3 beta)``; ``L = ln(d0/(4 eps0))/T``.
    """
    if not 0 < eta < 0.25:
        raise ValueError("eta must lie in (0, 1/4)")
    if not K > 1:
        raise ValueError("K must exceed 1")
    b = eta
    worst = -math.inf
    for lo, hi in ((0.0, b), (1.0 - b, 1.0)):
        res = minimize_scalar(lambda u: -f_prime(u), bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
        worst = max(worst, float(f_prime(res.x)), float(f_prime(lo)), float(f_prime(hi)))
    m = -worst
    z_lo, z_hi = float(u0_inverse(1.0 - b)), float(u0_inverse(b))
    res = minimize_scalar(lambda z: -u0_prime(z), bounds=(z_lo, z_hi), method="bounded", options={"xatol": 1e-13})
    a1 = float(min(-u0_prime(res.x), -u0_prime(z_lo), -u0_prime(z_hi)))
    return _assemble(eta, m, b, a1, _sup_F(), K, d0, T, eps0)


def profile_margin(consts: MotionConstants, zmax: float = 40.0, n: int = 10001) -> float:
    """``min_z (-U0'(z) - sigma f'(U0(z))) - 4 sigma beta`` on a dense sample."""
    z = np.linspace(-zmax, zmax, n)
    return float(np.min(-u0_prime(z) - consts.sigma * f_prime(u0(z))) - 4.0 * consts.sigma * consts.beta)


def motion_envelope(d: ScalarField, t: float, eps: float, consts: MotionConstants):
    """Lower and upper motion envelopes at (limit-problem) time ``t``."""
    if t < 0 or t > consts.T * (1 + 1e-12):
        raise ValueError(f"t={t:.6g} outside [0, T={consts.T}]")
    need, have = consts.window(eps)
    if need > have:
        raise EnvelopeWindowError(f"epsilon too large for (K, L, d0): exp(LT)+K={need:.4g} > d0/(2eps)={have:.4g}")
    p = float(consts.p(t, eps))
    q = float(consts.q(t, eps))
    lower = u0((d.values + eps * p) / eps) - q
    upper = u0((d.values - eps * p) / eps) + q
    return d.with_values(lower), d.with_values(upper)


# -- thresholds -------------------------------------------------------------------------

@dataclass(frozen=True)
class Thresholds:
    C7: float
    M0: float
    M1: float
    C: float
    K_min: float  # smallest K with U0(M1 - K) >= 1 - sigma beta / 3


def fit_C7(eta: float, eps: float, consts: GenerationConstants) -> float:
    """Smallest C7 with ``Y(|ln eps|/mu, xi; -+eps G)`` past ``1-eta`` (resp. ``eta``)
    once ``|xi - 1/2| >= C7 eps``."""
    tau = abs(math.log(eps)) / MU
    delta = eps * consts.G
    bound = 2.0 * consts.c0
    c7 = 0.0
    roots = perturbed_roots(-delta)
    if roots.alpha_plus <= 1.0 - eta or perturbed_roots(delta).alpha_minus >= eta:
        raise AdmissibilityError(
            f"eps*G={delta:.4g} moves the stable roots past the eta={eta} thresholds; reduce alpha or eps")
    # high side, worst case delta = -eps G
    g_hi = lambda xi: flow_Y(tau, xi, -delta) - (1.0 - eta)
    lo = roots.a + 1e-12
    if g_hi(lo) < 0:
        xi_hi = brentq(g_hi, lo, bound * (1 - 1e-9), xtol=1e-14)
        c7 = max(c7, (xi_hi - 0.5) / eps)
    roots = perturbed_roots(delta)
    g_lo = lambda xi: flow_Y(tau, xi, delta) - eta
    hi = roots.a - 1e-12
    if g_lo(hi) > 0:
        xi_lo = brentq(g_lo, -bound * (1 - 1e-9), hi, xtol=1e-14)
        c7 = max(c7, (0.5 - xi_lo) / eps)
    return float(c7)


def fit_thresholds(eta: float, eps: float, gen: GenerationConstants, motion: MotionConstants,
                   u_init: ScalarField | None = None, d_init: ScalarField | None = None) -> Thresholds:
    """``M0 = C7 + 3/2 C6``; ``M1`` from the initial data; ``C = exp(LT) + K + 2 sqrt2 artanh(1-eta)``.

    ``M1`` is the smallest value such that ``d0 >= M1 eps`` forces
    ``u0 <= 1/2 - M0 eps`` and ``d0 <= -M1 eps`` forces ``u0 >= 1/2 + M0 eps``
    on the grid, plus one grid spacing of slack.  Without initial data it
    is reported as nan.
    """
    c7 = fit_C7(eta, eps, gen)
    M0 = c7 + 1.5 * gen.C6
    M1 = math.nan
    if u_init is not None and d_init is not None:
        u, dd = u_init.values, d_init.values
        worst = 0.0
        sel = u > 0.5 - M0 * eps
        if sel.any():
            worst = max(worst, float(dd[sel].max()))
        sel = u < 0.5 + M0 * eps
        if sel.any():
            worst = max(worst, float(-dd[sel].min()))
        M1 = (worst + u_init.grid.h) / eps
    C = math.exp(motion.L * motion.T) + motion.K + 2.0 * SQRT2 * math.atanh(1.0 - eta)
    k_min = M1 + 2.0 * SQRT2 * math.atanh(1.0 - 2.0 * motion.sigma * motion.beta / 3.0)
    return Thresholds(c7, M0, M1, C, k_min)


# -- containment ----------------------------------------------------------------------------

@dataclass
class EnvelopeReport:
    max_lower_violation: float = 0.0
    max_upper_violation: float = 0.0
    violations: list = field(default_factory=list)  # (t, i, j, side, amount), bounded length
    checked: int = 0
    limit: int = 50

    @property
    def contained(self) -> bool:
        return self.max_lower_violation == 0.0 and self.max_upper_violation == 0.0

    def merge(self, other: "EnvelopeReport") -> "EnvelopeReport":
        self.max_lower_violation = max(self.max_lower_violation, other.max_lower_violation)
        self.max_upper_violation = max(self.max_upper_violation, other.max_upper_violation)
        room = self.limit - len(self.violations)
        self.violations.extend(other.violations[:max(room, 0)])
        self.checked += other.checked
        return self


def check_envelope(u: ScalarField, lower: ScalarField, upper: ScalarField, slack: float = 0.0,
                   t: float | None = None, limit: int = 50) -> EnvelopeReport:
    """Violations of ``lower - slack <= u <= upper + slack``."""
    if not (u.grid == lower.grid == upper.grid):
        raise ValueError("u and envelopes live on different grids")
    below = np.maximum(lower.values - u.values - slack, 0.0)
    above = np.maximum(u.values - upper.values - slack, 0.0)
    rep = EnvelopeReport(float(below.max()), float(above.max()), [], 1, limit)
    for side, arr in (("lower", below), ("upper", above)):
        idx = np.argwhere(arr > 0)
        if len(idx) == 0:
            continue
        order = np.argsort(-arr[tuple(idx.T)], kind="stable")[:limit]
        for i, j in idx[order]:
            if len(rep.violations) >= limit:
                break
            rep.violations.append((t, int(i), int(j), side, float(arr[i, j])))
    return rep


def default_slack(h: float, dt: float) -> float:
    return 10.0 * h * h + dt


def calibrate(check, start: float, max_doublings: int = 10):
    """Smallest ``start * 2^k`` (k <= max_doublings) for which ``check(value)`` is true.

    Returns ``(value, history)`` with ``history`` a list of ``(value, ok)``.
    """
    history = []
    value = start
    for _ in range(max_doublings + 1):
        ok = bool(check(value))
        history.append((value, ok))
        if ok:
            return value, history
        value *= 2.0
    raise CalibrationError(f"no admissible value up to {value / 2:.4g}: {history}")


# -- records ---------------------------------------------------------------------------------

def constants_record(**groups) -> dict:
    """Flatten dataclasses / scalars into ``{"group.key": value}``."""
    out = {}
    for name, obj in groups.items():
        items = asdict(obj).items() if hasattr(obj, "__dataclass_fields__") else [("", obj)]
        for k, v in items:
            out[f"{name}.{k}" if k else name] = v
    return out


def format_constants(record: dict) -> str:
    lines = []
    for k in sorted(record):
        v = record[k]
        lines.append(f"{k} = {repr(float(v)) if isinstance(v, (int, float, np.floating)) else v}")
    return "\n".join(lines) + "\n"


def parse_constants(text: str) -> dict:
    out = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition("=")
        val = val.strip()
        try:
            out[key.strip()] = float(val)
        except ValueError:
            out[key.strip()] = val
    return out
