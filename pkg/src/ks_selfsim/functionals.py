"""Free energies, functional-inequality deficits and the linearized operator.

Conventions
-----------
* ``P`` is the discrete ``(-Delta)^{-1}`` of :func:`radial_core.poisson_mode`.
* ``F = F1 - F2`` with ``F[n_M] = 0``.
* ``Q1[f] = (1/M) [ int f^2 n_M - int f n_M (P - kappa0 int)(f n_M) ]``,
  i.e. ``int f^2 dmu_M + (M / 2 pi) iint f log|x-y| f dmu_M dmu_M`` plus the
  gauge term ``kappa0 M (int f dmu_M)^2`` which puts ``f00`` in the kernel.
  For mass-preserving ``f``, ``F[n_M (1 + eps f)] = (M/2) Q1[f] eps^2 + O(eps^3)``.
* ``L`` is the operator ``(1/n_M) div[n_M grad(f - P(f n_M))]``; ``L+ = -L``
  has nonnegative spectrum and ``Q2[f] = Q1(f, L+ f)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

from .errors import DomainError, ModeError, ParameterError, ResolutionError
from .radial_core import (ModeField, gradient_energy, inner, integrate,
                          laplacian_mode, poisson_mode)
from .stationary import CRITICAL_MASS, kernel_gauge, solve_stationary

INEQUALITIES = (
    "loghls",            # classical log-HLS (optimal constant, equality at M mu)
    "loghls_nm",         # F1[n] >= F2[n] relative to n_M
    "onofri_classical",  # Euclidean Onofri with dmu and 1/(16 pi)
    "onofri_new",        # Onofri with dmu_M and 1/(2M)
    "poincare",          # spectral gap inequality for n_M
    "duality",           # F1*[phi] <= F2*[phi]
    "q1_nonneg",         # Q1[f] >= 0
    "q2_gap",            # Q2[f] >= Q1[f] (>= 2 Q1[f] for radial f)
)

DENSITY_FLOOR = 1e-300


@dataclass(frozen=True)
class DeficitReport:
    """``deficit = rhs - lhs``; the inequality asserts ``deficit >= 0``."""

    inequality_id: str
    lhs: float
    rhs: float
    deficit: float
    inputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.inequality_id not in INEQUALITIES:
            raise ParameterError(f"unknown inequality id {self.inequality_id!r}")

    @property
    def scale(self):
        return max(abs(self.lhs), abs(self.rhs), 1.0)

    @classmethod
    def make(cls, inequality_id, lhs, rhs, **inputs):
        return cls(inequality_id, float(lhs), float(rhs), float(rhs) - float(lhs), inputs)


def deficits_to_csv(rows, path):
    """``rows``: iterable of ``(input_id, DeficitReport)``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["inequality_id", "input_id", "lhs", "rhs", "deficit"])
        for ident, d in rows:
            wr.writerow([d.inequality_id, ident, f"{d.lhs:.17g}", f"{d.rhs:.17g}",
                         f"{d.deficit:.17g}"])


@dataclass(frozen=True)
class EnergyBreakdown:
    F1: float
    F2: float
    F: float
    mass: float
    mass_ok: bool
    K_used: str = "F[n_M] = 0"


def _radial(n):
    if n.k != 0:
        raise ModeError("this functional takes a radial (k = 0) field")
    return n


def entropy_term(n, log_ref):
    """``int n (log n - log_ref)`` with ``0 log 0 = 0``."""
    v = n.values
    pos = v > 0
    integrand = np.zeros_like(v)
    integrand[pos] = v[pos] * (np.log(v[pos]) - log_ref[pos])
    return float(np.dot(n.grid.weights, integrand))


def interaction(u, v=None):
    """``int u P(v) dx`` for radial fields."""
    v = u if v is None else v
    return float(np.dot(u.grid.weights, u.values * poisson_mode(v).values))


# ---------------------------------------------------------------- free energy

def free_energy(n, state, mass_tol=1e-6):
    """``F1[n] = int n log(n / n_M)`` and ``F2[n] = 1/2 int (n - n_M) P (n - n_M)``."""
    _radial(n)
    if np.any(n.values < 0):
        raise DomainError("density must be nonnegative")
    mass = integrate(n)
    F1 = entropy_term(n, state.log_n)
    F2 = 0.5 * interaction(n - state.n)
    return EnergyBreakdown(F1=F1, F2=F2, F=F1 - F2, mass=mass,
                           mass_ok=abs(mass - state.M) <= mass_tol * state.M)


def raw_free_energy(n):
    """``int n log n + 1/2 int |x|^2 n - 1/2 int n c`` (no additive constant)."""
    _radial(n)
    r = n.grid.nodes
    zero = np.zeros_like(r)
    return (entropy_term(n, zero) + 0.5 * float(np.dot(n.grid.weights, r * r * n.values))
            - 0.5 * interaction(n))


def free_energy_deficit(n, state):
    e = free_energy(n, state)
    return DeficitReport.make("loghls_nm", e.F2, e.F1, M=state.M, mass=e.mass, mass_ok=e.mass_ok)


def loghls_deficit(n):
    """Classical log-HLS deficit
    ``int n log(n/M) + (2/M) iint n n log|x-y| + M (1 + log pi)``.

    The double integral is ``-2 pi int n P(n)``.
    """
    _radial(n)
    if np.any(n.values < 0):
        raise DomainError("density must be nonnegative")
    M = integrate(n)
    if M <= 0:
        raise DomainError("log-HLS needs positive mass")
    ent = entropy_term(n, np.full_like(n.values, math.log(M)))
    double = -2.0 * math.pi * interaction(n)
    lhs = -(2.0 / M) * double - M * (1.0 + math.log(math.pi))
    return DeficitReport.make("loghls", lhs, ent, M=M)


def loghls_truncation_correction(R_max, lam=1.0):
    """Exact log-HLS deficit of ``mu_lam = lam^2 mu(lam x)`` restricted to the disk ``R_max``.

    The full-space deficit vanishes; restricting to the disk leaves this
    small remainder, obtained from the closed-form potential of the truncated
    measure and 1D adaptive quadrature (no grid involved). Dilation
    invariance reduces it to ``lam = 1`` on the disk of radius ``lam R_max``.
    """
    R = float(lam) * float(R_max)
    q = R * R / (1.0 + R * R)

    def rho(s):
        return 2.0 * s / (1.0 + s * s) ** 2

    def G(s):
        return (s * s * math.log(s) / (1.0 + s * s) if s > 0 else 0.0) - 0.5 * math.log1p(s * s)

    def inner_pot(s):
        # int_0^R log max(s, t) rho(t) dt
        return (math.log(s) * s * s / (1.0 + s * s) if s > 0 else 0.0) + G(R) - G(s)

    pts = [min(1.0, R), min(10.0, R)]
    ent = quad(lambda s: rho(s) * (-math.log(math.pi) - 2.0 * math.log1p(s * s) - math.log(q)),
               0.0, R, points=pts, limit=200, epsabs=1e-14, epsrel=1e-13)[0]
    inter = quad(lambda s: rho(s) * inner_pot(s), 0.0, R, points=pts, limit=200,
                 epsabs=1e-14, epsrel=1e-13)[0]
    return ent + (2.0 / q) * inter + q * (1.0 + math.log(math.pi))


# ---------------------------------------------------------------- Onofri family

def _as_modes(phi):
    if isinstance(phi, ModeField):
        return [phi]
    phi = list(phi)
    if not phi:
        raise ParameterError("empty mode sum")
    return phi


def _merge(modes):
    out = {}
    for f in modes:
        out[f.k] = out[f.k] + f if f.k in out else f
    return out


def log_exp_moment(phi, density):
    """``log int exp(phi) density dx`` for a radial density of unit mass on R^2.

    ``phi`` may be a mode sum; the angular integral uses a uniform theta grid,
    exact for trigonometric polynomials of the degrees involved. Integrands are
    written as ``exp(phi) - 1`` so the part of the density beyond ``R_max`` is
    accounted for exactly when ``phi`` vanishes there.
    """
    modes = _merge(_as_modes(phi))
    grid = next(iter(modes.values())).grid
    kmax = max(modes)
    ntheta = max(1, 4 * kmax + 4) if kmax > 0 else 1
    theta = 2.0 * np.pi * np.arange(ntheta) / ntheta
    field2d = np.zeros((grid.n, ntheta))
    for k, f in modes.items():
        field2d += f.values[:, None] * np.cos(k * theta)[None, :]
    s = max(float(field2d.max()), 0.0)
    ang = np.mean(np.exp(field2d - s) - math.exp(-s), axis=1)
    dens = density.values if isinstance(density, ModeField) else density
    val = float(np.dot(grid.weights, dens * ang)) + math.exp(-s)
    return s + math.log(val)


def _mean(phi, density):
    modes = _merge(_as_modes(phi))
    if 0 not in modes:
        return 0.0
    f = modes[0]
    dens = density.values if isinstance(density, ModeField) else density
    return float(np.dot(f.grid.weights, f.values * dens))


def _grad2(phi):
    return sum(gradient_energy(f) for f in _merge(_as_modes(phi)).values())


def classical_mu(grid):
    r = grid.nodes
    return 1.0 / (math.pi * (1.0 + r * r) ** 2)


def onofri_deficit(phi, state_or_mu):
    """Onofri deficit ``C int |grad phi|^2 - [log int e^phi dnu - int phi dnu]``.

    ``state_or_mu`` is a :class:`StationaryState` (``nu = mu_M``, ``C = 1/(2M)``)
    or the string ``"classical"`` (``nu = mu``, ``C = 1/(16 pi)``).
    """
    modes = _as_modes(phi)
    grid = modes[0].grid
    if isinstance(state_or_mu, str):
        if state_or_mu != "classical":
            raise ParameterError(f"unknown measure selector {state_or_mu!r}")
        dens = classical_mu(grid)
        const = 1.0 / (16.0 * math.pi)
        ident = "onofri_classical"
        M = 8.0 * math.pi
    else:
        dens = state_or_mu.n.values / state_or_mu.M
        const = 1.0 / (2.0 * state_or_mu.M)
        ident = "onofri_new"
        M = state_or_mu.M
    lhs = log_exp_moment(modes, dens) - _mean(modes, dens)
    rhs = const * _grad2(modes)
    return DeficitReport.make(ident, lhs, rhs, M=M)


def poincare_deficit(psi, state):
    """``int |grad psi|^2 - int |psi - mean|^2 n_M dx`` with mean over ``dmu_M``."""
    modes = _merge(_as_modes(psi))
    n = state.n.values
    var = 0.0
    for k, f in modes.items():
        v = f.values - (_mean(f, n / state.M) if k == 0 else 0.0)
        var += float(np.dot(f.grid.mode_weights(k), v * v * n))
    grad = _grad2(list(modes.values()))
    return DeficitReport.make("poincare", var, grad, M=state.M)


def f1_star(phi, state):
    """``sup_{n in X_M} int phi n - F1[n] = M log int e^phi dmu_M``."""
    return state.M * log_exp_moment(_radial(phi), state.n.values / state.M)


def f2_star(phi, state):
    """``sup_{n in X_M} int phi n - F2[n] = 1/2 int |grad phi|^2 + M int phi dmu_M``."""
    _radial(phi)
    return 0.5 * gradient_energy(phi) + state.M * _mean(phi, state.n.values / state.M)


def gibbs_density(phi, state):
    """Maximizer ``n = M e^phi mu_M / int e^phi dmu_M`` of the F1 Legendre problem."""
    lz = log_exp_moment(phi, state.n.values / state.M)
    return ModeField(state.grid, 0, np.exp(state.log_n + phi.values - lz))


def legendre_gap(phi, state):
    """``F2*[phi] - F1*[phi]`` (nonnegative by duality) plus Fenchel diagnostics.

    ``inputs['fenchel']`` is ``|int phi n - F1[n] - F1*[phi]|`` at the Gibbs
    maximizer ``n``.
    """
    a = f1_star(phi, state)
    b = f2_star(phi, state)
    n = gibbs_density(phi, state)
    attained = integrate(n.with_values(n.values * phi.values)) - free_energy(n, state).F1
    return DeficitReport.make("duality", a, b, M=state.M, fenchel=abs(attained - a))


def f2_fenchel_residual(n, state):
    """``|int phi n - F2[n] - F2*[phi]|`` at ``phi = P(n - n_M)``."""
    phi = poisson_mode(n - state.n)
    lhs = integrate(phi.with_values(phi.values * n.values)) - free_energy(n, state).F2
    return abs(lhs - f2_star(phi, state))


def g_functional(c, M):
    """``G[c] = 1/2 int n c - M log int exp(-r^2/2 + c) dx`` with ``n = -Delta c``."""
    _radial(c)
    grid = c.grid
    n = laplacian_mode(c)
    r = grid.nodes
    expo = c.values - 0.5 * r * r
    s = float(expo.max())
    logint = s + math.log(float(np.dot(grid.weights, np.exp(expo - s))))
    return 0.5 * float(np.dot(grid.weights, n.values * c.values)) - M * logint


def g_duality_gap(phi, state):
    """``G[c_M + phi] - G[c_M] - (F2*[phi] - F1*[phi])``; zero up to discretization."""
    base = g_functional(state.c, state.M)
    shifted = g_functional(state.c + phi, state.M)
    return shifted - base - (f2_star(phi, state) - f1_star(phi, state))


# ---------------------------------------------------------------- quadratic forms

def _gauge(state, gauge):
    return kernel_gauge(state) if gauge is None else gauge


def q1_form(f, g, state, gauge=None):
    """Symmetric bilinear form polarizing Q1."""
    if f.k != g.k:
        return 0.0
    n = state.n.values
    fn = f.with_values(f.values * n)
    gn = g.with_values(g.values * n)
    val = inner(f, g, n) - inner(f, poisson_mode(gn), n)
    if f.k == 0:
        val += _gauge(state, gauge) * integrate(fn) * integrate(gn)
    return val / state.M


def q1(f, state, gauge=None):
    return q1_form(f, f, state, gauge)


def _drift(state):
    d = state._cache.get("drift")
    if d is None:
        d = state.drift
        state._cache["drift"] = d
    return d


def local_operator(state, k):
    """Sparse ``psi -> (1/(r n_M)) (r n_M psi')' - k^2 psi / r^2``.

    Conservative flux form on control volumes, with ``r n_M`` at half nodes
    taken as the geometric mean (ratios formed from ``log n_M``, so nothing
    underflows). No flux through ``r = 0`` or ``r = R_max``. The matrix is
    self-adjoint for the diagonal weights ``r_i n_M(r_i) * (cell width)``.
    """
    key = ("Lloc", k)
    if key in state._cache:
        return state._cache[key]
    r = state.grid.nodes
    N = len(r)
    ln = state.log_n
    h = np.diff(r)
    rh = 0.5 * (r[:-1] + r[1:])
    # flux coefficient at i+1/2 divided by n_M at the neighbouring nodes
    up_ratio = np.exp(0.5 * (ln[1:] - ln[:-1]))      # n_{i+1/2} / n_i
    dn_ratio = 1.0 / up_ratio                         # n_{i+1/2} / n_{i+1}
    vol = np.empty(N)
    vol[1:-1] = r[1:-1] * 0.5 * (h[:-1] + h[1:])
    vol[-1] = r[-1] * 0.5 * h[-1]
    vol[0] = h[0] ** 2 / 8.0
    lo = np.zeros(N)
    up = np.zeros(N)
    up[:-1] = rh * up_ratio / h / vol[:-1]
    lo[1:] = rh * dn_ratio / h / vol[1:]
    di = -(up + lo)
    with np.errstate(divide="ignore"):
        di[1:] -= k * k / r[1:] ** 2
    if k > 0:
        di[0] = up[0] = 0.0
    mat = sp.diags([lo[1:], di, up[:-1]], [-1, 0, 1], format="csr")
    state._cache[key] = mat
    return mat


def potential_part(f, state):
    """``f - P(f n_M)``."""
    return f.values - poisson_mode(f.with_values(f.values * state.n.values)).values


def apply_L(f, state):
    """``L f = (1/n_M) div[n_M grad(f - P(f n_M))]`` for the mode of ``f``."""
    psi = potential_part(f, state)
    out = local_operator(state, f.k) @ psi
    if f.k > 0:
        out[0] = 0.0
    return f.with_values(out)


def apply_Lplus(f, state):
    """``L+ f = -L f`` (nonnegative on the Q1 inner product)."""
    return -apply_L(f, state)


def q2(f, state, gauge=None):
    """``Q2[f] = Q1(f, L+ f)``."""
    return q1_form(f, apply_Lplus(f, state), state, gauge)


def project_out_zero_mode(f, f00, state):
    """Remove the ``L^2(dmu_M)`` component of ``f`` along ``f00`` (k = 0 only)."""
    if f.k != 0:
        return f
    n = state.n.values
    a = inner(f, f00, n) / inner(f00, f00, n)
    return f - a * f00


# ---------------------------------------------------------------- dilation family

def rescale(n, lam):
    """``n_lambda(r) = lambda^2 n(lambda r)`` interpolated on the same grid."""
    grid = n.grid
    r = grid.nodes
    spline = CubicSpline(r, n.values, bc_type=((1, 0.0), "not-a-knot"))
    x = lam * r
    vals = np.where(x <= grid.r_max, lam * lam * spline(np.minimum(x, grid.r_max)), 0.0)
    return n.with_values(np.maximum(vals, 0.0))


def _half_mass_radius(n):
    m = n.grid.cumulative(n.values)
    return float(np.interp(0.5 * m[-1], m, n.grid.nodes))


def scaling_family_energy(n, lambdas, state=None, min_nodes=6):
    """Free energy along ``lambda -> lambda^2 n(lambda x)``.

    For ``M < 8 pi`` the value is ``F1 - F2`` against ``n_M`` of the same
    mass; for ``M >= 8 pi`` it is :func:`raw_free_energy`.
    """
    _radial(n)
    if np.any(n.values < 0):
        raise DomainError("density must be nonnegative")
    M = integrate(n)
    rh = _half_mass_radius(n)
    h = float(np.max(np.diff(n.grid.nodes)))
    out = []
    for lam in lambdas:
        if lam <= 0:
            raise ParameterError("dilation factors must be positive")
        if rh / lam < min_nodes * h:
            raise ResolutionError(
                f"lambda={lam}: rescaled half-mass radius {rh / lam:.3g} spans "
                f"fewer than {min_nodes} grid cells")
        if rh / lam > 0.5 * n.grid.r_max:
            raise ResolutionError(f"lambda={lam}: rescaled profile leaves the grid")
        nl = n if lam == 1 else rescale(n, lam)
        if M < CRITICAL_MASS:
            if state is None:
                state = solve_stationary(M, n.grid)
            out.append(free_energy(nl, state).F)
        else:
            out.append(raw_free_energy(nl))
    return out
