"""Zero-dimensional pieces: the bistable cubic, its perturbations, the
travelling-front profile and the perturbed ODE flow.

All functions accept scalars or numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

SQRT2 = np.sqrt(2.0)
MU = 0.25  # f'(1/2)
DELTA_MAX = np.sqrt(3.0) / 36.0  # |delta| beyond which f + delta loses two roots

# Exponential decay rate of the front profile and its derivatives.
DECAY_RATE = 1.0 / SQRT2


class RootsCoalesceError(ValueError):
    pass


class EquilibriumError(ValueError):
    pass


class StepSizeUnderflowError(RuntimeError):
    pass


@dataclass(frozen=True)
class BistableSpec:
    alpha: float
    c0: float = 1.05

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.c0 > 1:
            raise ValueError("c0 must exceed 1")


# -- nonlinearities ------------------------------------------------------------------

def f(u):
    return u * (1.0 - u) * (u - 0.5)


def f_prime(u):
    return -3.0 * u * u + 3.0 * u - 0.5


def f_second(u):
    return 3.0 - 6.0 * u


def g(u, spec: BistableSpec):
    return spec.alpha * u * (1.0 - u)


def g_prime(u, spec: BistableSpec):
    return spec.alpha * (1.0 - 2.0 * u)


def f_eps(u, eps: float, spec: BistableSpec):
    return f(u) + eps * g(u, spec)


def f_delta(u, delta: float):
    return f(u) + delta


# -- perturbed roots -------------------------------------------------------------------

@dataclass(frozen=True)
class PerturbedRoots:
    alpha_minus: float
    a: float
    alpha_plus: float
    mu_delta: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.alpha_minus, self.a, self.alpha_plus)


def perturbed_roots(delta: float) -> PerturbedRoots:
    """Roots of ``f(u) + delta`` in increasing order.

    With ``u = 1/2 + t`` the cubic becomes ``t^3 - t/4 - delta = 0``, solved
    by the trigonometric formula and polished with two Newton steps.
    """
    if abs(delta) >= DELTA_MAX:
        raise RootsCoalesceError(f"roots coalesce: |delta|={abs(delta):.6g} >= {DELTA_MAX:.6g}")
    theta = np.arccos(delta / DELTA_MAX) / 3.0
    k = np.arange(3)
    u = 0.5 + np.cos(theta - 2.0 * np.pi * k / 3.0) / np.sqrt(3.0)
    for _ in range(2):
        u = u - f_delta(u, delta) / f_prime(u)
    u = np.sort(u)
    return PerturbedRoots(float(u[0]), float(u[1]), float(u[2]), float(f_prime(u[1])))


def mu_of_delta(delta: float) -> float:
    return perturbed_roots(delta).mu_delta


# -- front profile ---------------------------------------------------------------------

def u0(z):
    return 0.5 * (1.0 - np.tanh(z / (2.0 * SQRT2)))


def u0_prime(z):
    s = z / (2.0 * SQRT2)
    return -1.0 / (4.0 * SQRT2) / np.cosh(s) ** 2


def u0_second(z):
    s = z / (2.0 * SQRT2)
    return np.tanh(s) / np.cosh(s) ** 2 / 8.0


def u0_inverse(u):
    """z with U0(z) = u, for u in (0, 1)."""
    return 2.0 * SQRT2 * np.arctanh(1.0 - 2.0 * np.asarray(u, dtype=float))


@dataclass(frozen=True)
class FrontProfile:
    """Decay constants of the profile: ``|U0| , |1-U0|, |U0'|+|U0''| <= C exp(-lam |z|)``."""
    decay_rate: float
    decay_constant: float

    value = staticmethod(u0)
    prime = staticmethod(u0_prime)
    second = staticmethod(u0_second)
    inverse = staticmethod(u0_inverse)


def _profile_constant() -> float:
    lam = DECAY_RATE
    # U0 e^{lam z} = 1/(1+e^{-lam z}) < 1 on z >= 0, so only the derivative bound matters.
    res = minimize_scalar(lambda z: -(abs(u0_prime(z)) + abs(u0_second(z))) * np.exp(lam * abs(z)),
                          bounds=(0.0, 40.0), method="bounded", options={"xatol": 1e-12})
    zs = np.linspace(0.0, 40.0, 40001)
    sampled = np.max((np.abs(u0_prime(zs)) + np.abs(u0_second(zs))) * np.exp(lam * zs))
    return max(1.0, float(-res.fun), float(sampled))


FRONT_PROFILE = FrontProfile(DECAY_RATE, _profile_constant())


# -- perturbed ODE flow --------------------------------------------------------------

_EQUILIBRIUM_TOL = 1e-13


def _rk4(y, h, delta):
    k1 = f_delta(y, delta)
    k2 = f_delta(y + 0.5 * h * k1, delta)
    k3 = f_delta(y + 0.5 * h * k2, delta)
    k4 = f_delta(y + h * k3, delta)
    return y + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def _integrate(tau: float, xi: np.ndarray, delta: float, atol: float, rtol: float,
               h_min: float = 1e-9) -> np.ndarray:
    """Adaptive RK4 with step doubling, one shared step for the whole vector."""
    y = xi.copy()
    if tau == 0.0 or y.size == 0:
        return y
    t = 0.0
    h = min(0.05, tau)
    while t < tau:
        h = min(h, tau - t)
        full = _rk4(y, h, delta)
        half = _rk4(_rk4(y, 0.5 * h, delta), 0.5 * h, delta)
        err = np.max(np.abs(half - full) / (atol + rtol * np.abs(half))) / 15.0
        if err <= 1.0:
            t += h
            y = half + (half - full) / 15.0
            h *= min(4.0, 0.9 * max(err, 1e-12) ** -0.2)
        else:
            h *= max(0.1, 0.9 * err ** -0.2)
            if h < h_min:
                raise StepSizeUnderflowError(f"step size underflow at tau={t:.6g}")
    return y


def flow_Y(tau: float, xi, delta: float, *, atol: float = 1e-13, rtol: float = 1e-11):
    """Solution of ``Y' = f(Y) + delta``, ``Y(0) = xi``, evaluated at ``tau``.

    Vectorised over ``xi``; duplicate initial values are integrated once.
    Initial values sitting on an equilibrium are returned unchanged.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if abs(delta) >= DELTA_MAX:
        raise RootsCoalesceError(f"roots coalesce: |delta|={abs(delta):.6g} >= {DELTA_MAX:.6g}")
    xi_arr = np.asarray(xi, dtype=float)
    flat = xi_arr.ravel()
    uniq, inverse = np.unique(flat, return_inverse=True)
    still = np.abs(f_delta(uniq, delta)) < _EQUILIBRIUM_TOL
    out = uniq.copy()
    if np.any(~still):
        out[~still] = _integrate(float(tau), uniq[~still], delta, atol, rtol)
    res = out[inverse].reshape(xi_arr.shape)
    return float(res) if res.ndim == 0 else res


def _check_not_equilibrium(xi, delta):
    fx = f_delta(np.asarray(xi, dtype=float), delta)
    if np.any(np.abs(fx) < _EQUILIBRIUM_TOL):
        raise EquilibriumError("derivative identity undefined at equilibrium")
    return fx


def flow_Y_xi(tau: float, xi, delta: float):
    """``dY/dxi`` through the identity ``f_delta(Y) / f_delta(xi)``."""
    fx = _check_not_equilibrium(xi, delta)
    return f_delta(flow_Y(tau, xi, delta), delta) / fx


def amplification_A(tau: float, xi, delta: float):
    """``(f'(Y) - f'(xi)) / f_delta(xi)``, equal to ``Y_xixi / Y_xi``."""
    fx = _check_not_equilibrium(xi, delta)
    return (f_prime(flow_Y(tau, xi, delta)) - f_prime(np.asarray(xi, dtype=float))) / fx


def generation_time(eps: float) -> float:
    """``mu^{-1} eps^2 |ln eps|``."""
    return float(eps * eps * abs(math.log(eps)) / MU)
