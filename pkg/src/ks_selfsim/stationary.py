"""Stationary states of the rescaled Keller-Segel system and their special modes.

The stationary equation is solved for the potential ``c`` in the convolution
gauge ``c = (-Delta)^{-1} n``:

    c = P[ M exp(c - r^2/2) / Z(c) ],   Z(c) = int exp(c - r^2/2) dx,

by damped fixed-point iteration followed by Newton-GMRES once the residual is
small. The residual reported is the discrete fixed-point residual
``max |c - P n(c)|``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline

from .errors import ConvergenceError, DomainError, ParameterError
from .radial_core import (ModeField, integrate, laplacian_mode, make_grid,
                          poisson_mode)

log = logging.getLogger(__name__)

CRITICAL_MASS = 8.0 * math.pi


def check_subcritical(M):
    if not (0.0 < M < CRITICAL_MASS):
        raise DomainError(
            f"mass M={M!r} outside (0, 8 pi); the 8 pi threshold separates "
            "global existence from finite-time blow-up"
        )


@dataclass(frozen=True, eq=False)
class StationaryState:
    """Converged pair ``(n_M, c_M)`` together with solver diagnostics."""

    M: float
    grid: object
    n: ModeField
    c: ModeField
    log_z: float
    iterations: int
    residual: float
    laplacian_residual: float = float("nan")
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def Z(self):
        return math.exp(self.log_z)

    @property
    def mu(self):
        """The probability density ``n_M / M``."""
        return self.n * (1.0 / self.M)

    @property
    def log_n(self):
        """``log n_M`` computed without forming tiny densities."""
        r = self.grid.nodes
        return math.log(self.M) + self.c.values - 0.5 * r * r - self.log_z

    @property
    def cumulated_mass(self):
        """``m(r) = int_0^r n_M(s) s ds``."""
        return self.grid.cumulative(self.n.values)

    @property
    def drift(self):
        """``(log n_M)' = c_M' - r`` with ``c_M' = -m/r``."""
        r = self.grid.nodes
        m = self.cumulated_mass
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(r > 0, -m / np.where(r > 0, r, 1.0), 0.0)
        return d - r

    def density_at(self, radii):
        """Interpolate ``n_M`` at arbitrary radii (zero beyond ``R_max``)."""
        radii = np.asarray(radii, dtype=float)
        spline = self._cache.get("spline")
        if spline is None:
            spline = CubicSpline(self.grid.nodes, self.log_n, bc_type=((1, 0.0), "not-a-knot"))
            self._cache["spline"] = spline
        inside = (radii >= 0) & (radii <= self.grid.r_max)
        out = np.zeros_like(radii)
        out[inside] = np.exp(spline(radii[inside]))
        return out


def _density(c, r, w, M):
    expo = c - 0.5 * r * r
    shift = expo.max()
    e = np.exp(expo - shift)
    s = float(np.dot(w, e))
    return M * e / s, math.log(s) + shift


def solve_stationary(M, grid=None, tol=1e-10, max_iter=500, c0=None):
    """Solve the stationary equation for mass ``M`` in (0, 8 pi).

    Damped fixed point ``c <- (1 - theta) c + theta P n(c)`` with ``theta``
    starting at 0.5, halved whenever the residual grows and restored after a
    successful step; Newton-GMRES takes over below residual 1e-3.
    """
    check_subcritical(M)
    if tol <= 0:
        raise ParameterError("tol must be positive")
    if grid is None:
        grid = make_grid()
    r = grid.nodes
    w = grid.weights
    if c0 is None:
        c = np.zeros_like(r)
    else:
        c = np.array(c0.values if isinstance(c0, ModeField) else c0, dtype=float)

    def P(v):
        return poisson_mode(ModeField(grid, 0, v)).values

    def residual_of(c):
        n, lz = _density(c, r, w, M)
        F = c - P(n)
        return F, n, lz, float(np.max(np.abs(F)))

    F, n, lz, res = residual_of(c)
    theta = 0.5
    it = 0
    while res > tol:
        if it >= max_iter:
            raise ConvergenceError(
                f"stationary solve for M={M} stopped after {it} iterations "
                f"with residual {res:.3e}", residual=res, iterations=it)
        it += 1
        if res < 1e-3:
            nn = n

            def jac(v, nn=nn):
                dn = nn * v - nn * (np.dot(w, nn * v) / M)
                return v - P(dn)

            J = spla.LinearOperator((len(r), len(r)), matvec=jac, dtype=float)
            delta, info = spla.gmres(J, -F, rtol=1e-13, atol=0.0, restart=60, maxiter=20)
            trial = c + delta
            Ft, nt, lzt, rt = residual_of(trial)
            if rt < res:
                c, F, n, lz, res = trial, Ft, nt, lzt, rt
                continue
        trial = (1.0 - theta) * c + theta * (c - F)
        Ft, nt, lzt, rt = residual_of(trial)
        if rt < res:
            c, F, n, lz, res = trial, Ft, nt, lzt, rt
            theta = 0.5
        else:
            theta *= 0.5
            if theta < 1e-8:
                raise ConvergenceError(
                    f"damping collapsed for M={M} at residual {res:.3e}",
                    residual=res, iterations=it)
    cfield = ModeField(grid, 0, c)
    nfield = ModeField(grid, 0, n)
    lap_res = float(np.max(np.abs(laplacian_mode(cfield).values[:-1] - n[:-1])))
    log.debug("M=%g converged in %d iterations, residual %.2e", M, it, res)
    return StationaryState(M=float(M), grid=grid, n=nfield, c=cfield, log_z=lz,
                           iterations=it, residual=res, laplacian_residual=lap_res)


# ---------------------------------------------------------------- special modes

def set_default_dM(state, dM):
    """Step used by every later ``f00`` / ``kappa0`` computation on ``state``."""
    state._cache["default_dM"] = _check_dm(state, dM)


def _check_dm(state, dM):
    if dM is None:
        dM = state._cache.get("default_dM", 1e-3 * state.M)
    if not 0.0 < dM < min(state.M, CRITICAL_MASS - state.M) / 10.0:
        raise ParameterError(f"dM={dM!r} must lie in (0, min(M, 8 pi - M) / 10)")
    return dM


def _neighbours(state, dM):
    key = ("aux", dM)
    if key not in state._cache:
        tol = min(state.residual, 1e-12) if state.residual > 0 else 1e-12
        tol = max(tol, 1e-13)
        plus = solve_stationary(state.M + dM, state.grid, tol=tol, c0=state.c)
        minus = solve_stationary(state.M - dM, state.grid, tol=tol, c0=state.c)
        state._cache[key] = (plus, minus)
    return state._cache[key]


def zero_mode(state, dM=None):
    """``f00 = d/dM log n_M`` by a centred difference of two nearby solves."""
    dM = _check_dm(state, dM)
    plus, minus = _neighbours(state, dM)
    return ModeField(state.grid, 0, (plus.log_n - minus.log_n) / (2.0 * dM))


def kernel_gauge(state, dM=None):
    """Constant ``kappa0 = d/dM log Z - 1/M``.

    In the convolution gauge ``P[f00 n_M] = f00 + kappa0``; shifting the Green
    kernel by ``-kappa0`` makes ``f00`` an exact solution of
    ``-Delta f00 = f00 n_M`` and puts it in the kernel of Q1.
    """
    dM = _check_dm(state, dM)
    plus, minus = _neighbours(state, dM)
    return (plus.log_z - minus.log_z) / (2.0 * dM) - 1.0 / state.M


def dilation_mode(state):
    """Generator of mass-preserving dilations, ``div(x n_M) / n_M = 2 - m(r) - r^2``.

    This is ``2 + x . grad log n_M``; the constant 2 makes it mass-neutral and
    an eigenfunction of L+ with eigenvalue 2 (``x . grad log n_M`` alone is not).
    """
    r = state.grid.nodes
    return ModeField(state.grid, 0, 2.0 - state.cumulated_mass - r * r)


def translation_mode(state):
    """k = 1 profile of ``d/dx1 log n_M``: ``c_M' - r``."""
    return ModeField(state.grid, 1, state.drift)


def zero_mode_residual(state, f00):
    """``||-Delta f00 - n_M f00|| / ||n_M f00||`` in L^2(dx), interior nodes."""
    lhs = laplacian_mode(f00).values
    rhs = state.n.values * f00.values
    w = state.grid.weights
    sl = slice(0, -1)
    return math.sqrt(np.dot(w[sl], (lhs - rhs)[sl] ** 2) / np.dot(w[sl], rhs[sl] ** 2))


@dataclass(frozen=True, eq=False)
class SpecialModes:
    f00: ModeField
    f01: ModeField
    f1: ModeField
    kappa0: float
    dM: float
    f00_mass: float  # int f00 n_M dx, should be 1


def special_modes(state, dM=None):
    dM = _check_dm(state, dM)
    f00 = zero_mode(state, dM)
    return SpecialModes(
        f00=f00, f01=dilation_mode(state), f1=translation_mode(state),
        kappa0=kernel_gauge(state, dM), dM=dM,
        f00_mass=integrate(f00.with_values(f00.values * state.n.values)),
    )


def stationary_to_csv(state, path, modes=None):
    """Write ``r,n_M,c_M,f00,f01,f1``."""
    if modes is None:
        modes = special_modes(state)
    cols = [state.grid.nodes, state.n.values, state.c.values,
            modes.f00.values, modes.f01.values, modes.f1.values]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["r", "n_M", "c_M", "f00", "f01", "f1"])
        for row in zip(*cols):
            wr.writerow([f"{float(x):.17g}" for x in row])
