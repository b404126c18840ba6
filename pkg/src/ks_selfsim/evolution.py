"""Radial nonlinear dynamics in cumulated-mass form and per-mode linearized dynamics.

With ``m(t, r) = int_0^r n(t, s) s ds`` the rescaled system becomes the local
equation

    m_t = m'' - m'/r + r m' + m m'/r,     m(t, 0) = 0,  m(t, R) = M / (2 pi),

since ``c' = -m/r`` and ``n = m'/r``. Both integrators are first-order IMEX
(stiff linear part implicit, the rest explicit) wrapped in step doubling with
Richardson extrapolation; the step is adapted over ``dt_out * 2**-j`` so that
factorizations are reused and output times are hit exactly.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, FitError, IntegrationError, ParameterError
from .functionals import free_energy, local_operator, project_out_zero_mode, q1
from .radial_core import ModeField, integrate, poisson_mode
from .stationary import CRITICAL_MASS, zero_mode

log = logging.getLogger(__name__)

STENCIL = 7
MAX_REFINE = 30


@dataclass(frozen=True, eq=False)
class CumulatedState:
    grid: object
    m: np.ndarray
    t: float

    @property
    def M(self):
        return 2.0 * math.pi * float(self.m[-1])

    def density(self):
        return ModeField(self.grid, 0, density_from_cumulated(self.grid, self.m))


@dataclass(frozen=True, eq=False)
class EvolutionTrace:
    times: np.ndarray
    mass: np.ndarray
    free_energy: np.ndarray
    q1: np.ndarray
    l1_dist: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    final: object = None

    def column(self, name):
        return np.asarray(getattr(self, name), dtype=float)


@dataclass(frozen=True)
class RateFit:
    rate: float
    window: tuple
    r2: float
    observable: str
    samples: int


def _ops(grid):
    cache = grid.__dict__.setdefault("_evo_cache", {})
    if "ops" not in cache:
        r = grid.nodes
        D1 = grid.diff_matrix(1, 1, STENCIL)
        D2 = grid.diff_matrix(2, 1, STENCIL)
        inv_r = np.zeros_like(r)
        inv_r[1:] = 1.0 / r[1:]
        A = (D2 + sp.diags(r - inv_r) @ D1).tolil()
        A[0, :] = 0.0
        A[-1, :] = 0.0
        cache["ops"] = (D1, D2, inv_r, A.tocsr())
    return cache["ops"]


def density_from_cumulated(grid, m):
    """``n = m'/r`` with ``n(0) = m''(0)``."""
    D1, D2, inv_r, _ = _ops(grid)
    n = (D1 @ m) * inv_r
    n[0] = (D2 @ m)[0]
    return n


def cumulated_rhs(grid, m):
    """Right-hand side of the cumulated-mass equation (zero on boundary rows)."""
    D1, _, inv_r, A = _ops(grid)
    out = A @ m + m * (D1 @ m) * inv_r
    out[0] = out[-1] = 0.0
    return out


def stationary_rhs_residual(state):
    """``max |rhs(m_M)|``: how far ``n_M`` is from a discrete fixed point."""
    return float(np.max(np.abs(cumulated_rhs(state.grid, state.cumulated_mass))))


class _ImplicitSolver:
    """Cached LU factorizations of ``I - dt A`` with Dirichlet boundary rows."""

    def __init__(self, A, fixed_rows):
        self.A = A.tocsc()
        self.fixed = fixed_rows
        self._lu = {}

    def solve(self, dt, rhs):
        lu = self._lu.get(dt)
        if lu is None:
            M = sp.identity(self.A.shape[0], format="csc") - dt * self.A
            M = M.tolil()
            for i in self.fixed:
                M[i, :] = 0.0
                M[i, i] = 1.0
            lu = spla.splu(M.tocsc())
            self._lu[dt] = lu
        return lu.solve(rhs)


def _sup(v):
    return float(np.max(np.abs(v)))


def _integrate(y0, step, T, dt_out, tol, on_sample, accept=None, norm=_sup):
    """Adaptive driver: step doubling + Richardson over ``dt_out * 2**-j``.

    ``step(y, dt)`` is one first-order IMEX step; ``norm`` measures the
    difference between one full step and two half steps; ``accept(y_old,
    y_new)`` returns False to reject a candidate (the step is then halved).
    """
    if not (dt_out > 0 and T > 0):
        raise ParameterError("T and dt must be positive")
    n_out = int(round(T / dt_out))
    if n_out < 1 or abs(n_out * dt_out - T) > 1e-9 * T:
        raise ParameterError("T must be a positive multiple of dt")
    y = y0
    j = 0
    stats = {"accepted": 0, "rejected": 0, "monotonicity_rejections": 0,
             "dt_min": dt_out, "dt_max": 0.0}
    on_sample(0.0, y)
    for s in range(n_out):
        ticks = 0
        total = 1 << MAX_REFINE
        while ticks < total:
            while True:
                if j > MAX_REFINE:
                    raise IntegrationError(f"time step underflow near t={s * dt_out:.4g}")
                h = dt_out / (1 << j)
                span = total >> j
                if ticks + span > total or ticks % span:
                    j += 1
                    continue
                full = step(y, h)
                half = step(step(y, 0.5 * h), 0.5 * h)
                err = norm(half - full)
                new = 2.0 * half - full
                ok = err <= tol and np.all(np.isfinite(new))
                if ok and accept is not None and not accept(y, new):
                    stats["monotonicity_rejections"] += 1
                    ok = False
                if ok:
                    break
                stats["rejected"] += 1
                j += 1
            y = new
            ticks += span
            stats["accepted"] += 1
            stats["dt_min"] = min(stats["dt_min"], h)
            stats["dt_max"] = max(stats["dt_max"], h)
            # first-order error ~ h^2: coarsen when comfortably below tol
            if err < 0.2 * tol and j > 0 and (ticks % (span << 1)) == 0:
                j -= 1
        on_sample((s + 1) * dt_out, y)
    return y, stats


def _masked_ratio(n, state, floor):
    """``(n - n_M)/n_M`` on nodes where ``n_M >= floor * max n_M``, zero elsewhere."""
    ln = state.log_n
    keep = ln >= ln.max() + math.log(floor)
    f = np.zeros_like(n)
    f[keep] = (n[keep] - state.n.values[keep]) / state.n.values[keep]
    return ModeField(state.grid, 0, f)


def evolve_nonlinear(n0, state, T, dt, tol=1e-8, balanced=True, mass_tol=1e-6,
                     mask_floor=1e-10, monotone_tol=1e-10):
    """Integrate the radial nonlinear flow from ``n0`` up to time ``T``.

    ``dt`` is the sampling interval of the trace (and the largest internal
    step). With ``balanced=True`` the discrete residual of the stationary
    profile is subtracted from the right-hand side, making ``n_M`` an exact
    discrete fixed point; the removed residual is reported in the diagnostics.
    Candidate steps along which ``m`` fails to be nondecreasing (beyond
    ``monotone_tol`` relative) are rejected and the step halved.
    """
    if n0.k != 0:
        raise ParameterError("nonlinear evolution is radial (k = 0)")
    if np.any(n0.values < 0):
        raise DomainError("initial density must be nonnegative")
    grid = state.grid
    if not grid.same_as(n0.grid):
        raise ParameterError("initial density and stationary state use different grids")
    m0 = grid.cumulative(n0.values)
    M = 2.0 * math.pi * m0[-1]
    if M >= CRITICAL_MASS:
        raise DomainError(f"mass {M:.6g} >= 8 pi: blow-up regime excluded")
    if abs(M - state.M) > mass_tol * state.M:
        raise ParameterError(f"initial mass {M:.10g} differs from stationary mass {state.M:.10g}")
    mb = state.M / (2.0 * math.pi)
    m0 = m0 * (mb / m0[-1])
    D1, _, inv_r, A = _ops(grid)
    mM = state.cumulated_mass
    unbalanced = cumulated_rhs(grid, mM)
    shift = unbalanced if balanced else np.zeros_like(mM)
    solver = _ImplicitSolver(A, (0, len(mM) - 1))

    def step(m, h):
        rhs = m + h * (m * (D1 @ m) * inv_r - shift)
        rhs[0] = 0.0
        rhs[-1] = mb
        return solver.solve(h, rhs)

    def accept(old, new):
        return float(np.min(np.diff(new))) >= -monotone_tol * mb

    rows = {"t": [], "mass": [], "F": [], "q1": [], "l1": []}
    neg = {"min_density": math.inf}

    def sample(t, m):
        n = density_from_cumulated(grid, m)
        neg["min_density"] = min(neg["min_density"], float(n.min()))
        nf = ModeField(grid, 0, np.maximum(n, 0.0))
        rows["t"].append(t)
        rows["mass"].append(integrate(nf))
        rows["F"].append(free_energy(nf, state, mass_tol=1e-3).F)
        rows["q1"].append(q1(_masked_ratio(n, state, mask_floor), state))
        rows["l1"].append(integrate(nf.with_values(np.abs(n - state.n.values))))

    m_end, stats = _integrate(m0, step, T, dt, tol * mb, sample, accept)
    F = np.asarray(rows["F"])
    stats.update(
        balanced=balanced,
        stationary_rhs_residual=float(np.max(np.abs(unbalanced))),
        max_free_energy_increase=float(max(np.max(np.diff(F)), 0.0)) if len(F) > 1 else 0.0,
        min_density=neg["min_density"],
    )
    return EvolutionTrace(times=np.asarray(rows["t"]), mass=np.asarray(rows["mass"]),
                          free_energy=F, q1=np.asarray(rows["q1"]),
                          l1_dist=np.asarray(rows["l1"]), diagnostics=stats,
                          final=CumulatedState(grid, m_end, float(T)))


def evolve_linearized_mode(f0, state, T, dt, tol=1e-7, project=True):
    """Integrate ``f_t = -L+ f`` for one angular mode.

    The transport part is implicit; the nonlocal part ``-L_loc P(f n_M)`` is
    explicit (it is of order zero). For k = 0 and ``project=True`` the
    ``f00`` component is removed initially and after every step. Local errors
    are measured in ``L^2(dmu_M)`` relative to the initial norm (the sup norm
    would be dominated by tail nodes where ``n_M`` vanishes). The trace columns are the perturbation
    mass ``int f n_M``, the second-order energy ``(M/2) Q1[f]``, ``Q1[f]`` and
    ``int |f| n_M``.
    """
    grid = state.grid
    k = f0.k
    n = state.n.values
    Lloc = local_operator(state, k)
    fixed = (0,) if k > 0 else ()
    solver = _ImplicitSolver(Lloc, fixed)
    f00 = zero_mode(state) if (k == 0 and project) else None

    def proj(v):
        if f00 is None:
            return v
        return project_out_zero_mode(ModeField(grid, 0, v), f00, state).values

    def step(f, h):
        pot = poisson_mode(ModeField(grid, k, f * n)).values
        rhs = f - h * (Lloc @ pot)
        if k > 0:
            rhs[0] = 0.0
        return proj(solver.solve(h, rhs))

    y0 = proj(np.array(f0.values, dtype=float))
    wn = grid.mode_weights(k) * n / state.M

    def norm(v):
        return math.sqrt(float(np.dot(wn, v * v)))

    scale = max(norm(y0), 1e-300)
    rows = {"t": [], "mass": [], "F": [], "q1": [], "l1": []}

    def sample(t, f):
        ff = ModeField(grid, k, f)
        q = q1(ff, state)
        rows["t"].append(t)
        rows["mass"].append(integrate(ff.with_values(f * n)) if k == 0 else 0.0)
        rows["F"].append(0.5 * state.M * q)
        rows["q1"].append(q)
        alpha = 2.0 * math.pi if k == 0 else 4.0  # int_0^2pi |cos k theta|
        rows["l1"].append(alpha * float(np.dot(grid.weights / (2.0 * math.pi), np.abs(f) * n)))

    f_end, stats = _integrate(y0, step, T, dt, tol * scale, sample, norm=norm)
    stats["initial_norm"] = scale
    return EvolutionTrace(times=np.asarray(rows["t"]), mass=np.asarray(rows["mass"]),
                          free_energy=np.asarray(rows["F"]), q1=np.asarray(rows["q1"]),
                          l1_dist=np.asarray(rows["l1"]), diagnostics=stats,
                          final=ModeField(grid, k, f_end))


_OBSERVABLES = {"q1": "q1", "free_energy": "free_energy", "l1_dist": "l1_dist",
                "l1": "l1_dist", "F": "free_energy"}


def fit_rate(trace, observable="q1", window=(2.0, 6.0), floor=1e-13):
    """Least-squares decay rate ``-d log(obs)/dt`` on ``window``.

    Samples with values ``<= floor`` are discarded; fewer than five remaining
    samples raise :class:`FitError`.
    """
    if isinstance(trace, EvolutionTrace):
        name = _OBSERVABLES.get(observable)
        if name is None:
            raise ParameterError(f"unknown observable {observable!r}")
        t = trace.times
        y = trace.column(name)
    else:
        t, y = (np.asarray(a, dtype=float) for a in trace)
    lo, hi = window
    sel = (t >= lo - 1e-12) & (t <= hi + 1e-12) & (y > floor)
    if int(sel.sum()) < 5:
        raise FitError(f"only {int(sel.sum())} usable samples of {observable} in {window}")
    ts, ly = t[sel], np.log(y[sel])
    slope, icpt = np.polyfit(ts, ly, 1)
    pred = slope * ts + icpt
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RateFit(rate=-float(slope), window=(float(lo), float(hi)), r2=r2,
                   observable=observable, samples=int(sel.sum()))


def trace_to_csv(trace, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "mass", "free_energy", "q1", "l1_dist"])
        for row in zip(trace.times, trace.mass, trace.free_energy, trace.q1, trace.l1_dist):
            wr.writerow([f"{float(x):.17g}" for x in row])


def rates_to_csv(fits, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["observable", "rate", "window_lo", "window_hi", "r2"])
        for f in fits:
            wr.writerow([f.observable, f"{f.rate:.17g}", f"{f.window[0]:.17g}",
                         f"{f.window[1]:.17g}", f"{f.r2:.17g}"])
