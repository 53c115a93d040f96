"""Uniform-grid calculus with homogeneous Neumann boundaries.

Fields live on the nodes of a rectangular tensor grid ``[0, lx] x [0, ly]``
(boundary nodes included) and are stored as arrays of shape ``(nx, ny)``
with ``values[i, j]`` at ``(x_i, y_j)``.  The Neumann condition is imposed
by mirror ghost nodes, ``f[-1] = f[1]``.  Discrete integrals use the
trapezoidal weights, which is the inner product that makes the mirrored
Laplacian symmetric; with those weights the discrete divergence
telescopes to zero and the Helmholtz mass identity holds exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy import fft


class GridMismatchError(ValueError):
    """Operands were defined on different grids."""


class HelmholtzConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ValueError(f"grid needs at least 8 nodes per axis, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("grid lengths must be positive")

    @property
    def hx(self) -> float:
        return self.lx / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.ly / (self.ny - 1)

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.lx, self.nx)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(0.0, self.ly, self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights (cell area included)."""
        wx = np.ones(self.nx)
        wx[[0, -1]] = 0.5
        wy = np.ones(self.ny)
        wy[[0, -1]] = 0.5
        return np.outer(wx, wy) * (self.hx * self.hy)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(self.weights * values))

    def field(self, values) -> "ScalarField":
        return ScalarField(np.asarray(values, dtype=float), self)

    def zeros(self) -> "ScalarField":
        return ScalarField(np.zeros(self.shape), self)

    def full(self, c: float) -> "ScalarField":
        return ScalarField(np.full(self.shape, float(c)), self)

    def from_function(self, fn) -> "ScalarField":
        X, Y = self.mesh()
        return ScalarField(np.broadcast_to(np.asarray(fn(X, Y), dtype=float), self.shape).copy(), self)


@dataclass(frozen=True, eq=False)
class ScalarField:
    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(values, self.grid)

    def integral(self) -> float:
        return self.grid.integrate(self.values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True, eq=False)
class VectorField:
    x: ScalarField
    y: ScalarField

    def __post_init__(self):
        _same_grid(self.x, self.y)

    @property
    def grid(self) -> Grid:
        return self.x.grid


def _same_grid(*fields) -> Grid:
    grid = fields[0].grid
    for other in fields[1:]:
        if other.grid != grid:
            raise GridMismatchError(f"grid mismatch: {grid} vs {other.grid}")
    return grid


# -- array kernels -----------------------------------------------------------

def lap(a: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """Five-point Laplacian with mirror ghosts on a raw array."""
    p = np.pad(a, 1, mode="reflect")
    return ((p[2:, 1:-1] - 2.0 * a + p[:-2, 1:-1]) / hx**2
            + (p[1:-1, 2:] - 2.0 * a + p[1:-1, :-2]) / hy**2)


def grad(a: np.ndarray, hx: float, hy: float) -> tuple[np.ndarray, np.ndarray]:
    """Centered gradient; the mirror makes the normal component vanish on the boundary."""
    p = np.pad(a, 1, mode="reflect")
    return ((p[2:, 1:-1] - p[:-2, 1:-1]) / (2.0 * hx),
            (p[1:-1, 2:] - p[1:-1, :-2]) / (2.0 * hy))


def div_faces(fx: np.ndarray, fy: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """Divergence from face fluxes.

    ``fx`` has shape ``(nx-1, ny)`` (flux through the face between nodes i and
    i+1), ``fy`` has shape ``(nx, ny-1)``.  Boundary faces carry zero flux and
    boundary nodes own half control volumes.
    """
    nx, ny = fx.shape[0] + 1, fy.shape[1] + 1
    out = np.zeros((nx, ny))
    out[:-1, :] += fx
    out[1:, :] -= fx
    out /= hx
    out[[0, -1], :] *= 2.0
    oy = np.zeros((nx, ny))
    oy[:, :-1] += fy
    oy[:, 1:] -= fy
    oy /= hy
    oy[:, [0, -1]] *= 2.0
    return out + oy


def face_average(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return 0.5 * (a[1:, :] + a[:-1, :]), 0.5 * (a[:, 1:] + a[:, :-1])


def face_difference(a: np.ndarray, hx: float, hy: float) -> tuple[np.ndarray, np.ndarray]:
    return (a[1:, :] - a[:-1, :]) / hx, (a[:, 1:] - a[:, :-1]) / hy


# -- public operators ----------------------------------------------------------

def laplacian_neumann(f: ScalarField) -> ScalarField:
    g = f.grid
    return ScalarField(lap(f.values, g.hx, g.hy), g)


def gradient_neumann(f: ScalarField) -> VectorField:
    g = f.grid
    gx, gy = grad(f.values, g.hx, g.hy)
    return VectorField(ScalarField(gx, g), ScalarField(gy, g))


def divergence_flux(F: VectorField) -> ScalarField:
    """Conservative divergence of a node vector field.

    Face fluxes are arithmetic averages of the adjacent node values; the
    normal flux through the boundary is zero, so the trapezoidal integral of
    the result vanishes up to rounding.
    """
    g = F.grid
    fx, _ = face_average(F.x.values)
    _, fy = face_average(F.y.values)
    return ScalarField(div_faces(fx, fy, g.hx, g.hy), g)


# -- Helmholtz solver ------------------------------------------------------------

def helmholtz_residual(v: np.ndarray, rhs: np.ndarray, gamma: float, hx: float, hy: float) -> np.ndarray:
    return rhs - (gamma * v - lap(v, hx, hy))


def _cg(rhs, gamma, grid, tol, max_iter, x0):
    hx, hy = grid.hx, grid.hy
    w = grid.weights
    diag = 2.0 / hx**2 + 2.0 / hy**2 + gamma
    scale = np.max(np.abs(rhs))
    v = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=float)
    r = helmholtz_residual(v, rhs, gamma, hx, hy)
    res = np.max(np.abs(r))
    if res <= tol * scale:
        return v, res, 0
    # CG on the W-weighted (symmetric) system with Jacobi preconditioning.
    z = r / diag
    p = z.copy()
    rz = np.sum(w * r * z)
    for k in range(1, max_iter + 1):
        Ap = gamma * p - lap(p, hx, hy)
        step = rz / np.sum(w * p * Ap)
        v += step * p
        r -= step * Ap
        res = np.max(np.abs(r))
        if res <= tol * scale:
            return v, res, k
        z = r / diag
        rz_new = np.sum(w * r * z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise HelmholtzConvergenceError("Helmholtz CG did not converge", res / scale, max_iter)


class SpectralHelmholtz:
    """Direct solver for the same discrete operator via the type-I DCT.

    The mirrored five-point Laplacian is diagonalised by DCT-I, so one
    forward and one inverse transform solve ``-lap v + gamma v = rhs``
    exactly (to rounding).  Used inside time stepping where thousands of
    solves are needed.
    """

    def __init__(self, grid: Grid, gamma: float):
        self.grid = grid
        self.gamma = float(gamma)
        kx = np.arange(grid.nx)
        ky = np.arange(grid.ny)
        lx = (2.0 - 2.0 * np.cos(np.pi * kx / (grid.nx - 1))) / grid.hx**2
        ly = (2.0 - 2.0 * np.cos(np.pi * ky / (grid.ny - 1))) / grid.hy**2
        self._symbol = self.gamma + lx[:, None] + ly[None, :]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        first = rhs.flat[0]
        if np.all(rhs == first):
            return np.full(rhs.shape, first / self.gamma)
        return fft.idctn(fft.dctn(rhs, type=1) / self._symbol, type=1)


@lru_cache(maxsize=32)
def spectral_operator(grid: Grid, gamma: float) -> SpectralHelmholtz:
    """Shared :class:`SpectralHelmholtz` instance for ``(grid, gamma)``."""
    return SpectralHelmholtz(grid, gamma)


def solve_helmholtz_neumann(rhs: ScalarField, gamma: float, tol: float = 1e-10, *,
                            max_iter: int | None = None, x0: np.ndarray | None = None,
                            method: str = "cg") -> ScalarField:
    """Solve ``-lap v + gamma v = rhs`` with homogeneous Neumann conditions.

    ``method="cg"`` runs preconditioned conjugate gradients (default cap of
    ``10 * nx * ny`` iterations).  ``method="dct"`` uses the exact spectral
    solve and falls back to CG if the residual check fails.  Either way the
    result satisfies ``max|rhs - A v| <= tol * max|rhs|``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    grid = rhs.grid
    b = rhs.values
    if np.all(b == b.flat[0]):
        return ScalarField(np.full(grid.shape, b.flat[0] / gamma), grid)
    if max_iter is None:
        max_iter = 10 * grid.nx * grid.ny
    if method == "dct":
        v = spectral_operator(grid, float(gamma)).solve(b)
        res = np.max(np.abs(helmholtz_residual(v, b, gamma, grid.hx, grid.hy)))
        if res <= tol * np.max(np.abs(b)):
            return ScalarField(v, grid)
        x0 = v
    elif method != "cg":
        raise ValueError(f"unknown method {method!r}")
    v, _, _ = _cg(b, gamma, grid, tol, max_iter, x0)
    return ScalarField(v, grid)
