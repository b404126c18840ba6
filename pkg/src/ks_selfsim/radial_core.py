"""Radial grids, quadrature and Green operators for the 2D Laplacian.

A field on the plane is represented one angular Fourier mode at a time:
``ModeField(grid, k, values)`` stands for the real function

    x -> values(|x|) * cos(k * theta).

Only cosine modes are ever assembled; the sine copies are degenerate and give
identical radial problems. With this convention

    int_{R^2} (u cos k theta)(v cos k theta) dx = alpha_k int_0^inf u v r dr,

with ``alpha_0 = 2 pi`` and ``alpha_k = pi`` for ``k >= 1``.

Quadrature is product integration against ``r dr``: the integrand divided by
``r`` is replaced by its local degree-5 Lagrange interpolant on every interval,
which gives O(h^6) accuracy for smooth radial fields and strictly positive
weights, including at the origin node.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ModeError, ParameterError

DEFAULT_N = 2048
DEFAULT_R_MAX = 16.0
_STENCIL = 6


def fornberg_weights(z, x, m):
    """Finite-difference weights for derivatives 0..m at ``z`` on nodes ``x``.

    Returns an array of shape (m + 1, len(x)).
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = np.zeros((m + 1, n))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def _lagrange_basis(xs, t):
    """Lagrange basis on stencils ``xs`` (n, p) evaluated at ``t`` (n, g) -> (n, g, p)."""
    n, p = xs.shape
    out = np.ones((n, t.shape[1], p))
    for j in range(p):
        for m in range(p):
            if m != j:
                out[:, :, j] *= (t - xs[:, m:m + 1]) / (xs[:, j:j + 1] - xs[:, m:m + 1])
    return out


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Nodes ``0 = r_0 < ... < r_{N-1} = R_max`` with weights for ``int f 2 pi r dr``."""

    nodes: np.ndarray
    weights: np.ndarray
    r_max: float
    stretch: float = 0.0
    # interval-wise product weights for int_{r_i}^{r_{i+1}} F(s) s ds
    _iw: np.ndarray = field(repr=False, default=None)
    _istart: np.ndarray = field(repr=False, default=None)

    def __len__(self):
        return len(self.nodes)

    @property
    def n(self):
        return len(self.nodes)

    @property
    def sds(self):
        """Weights for ``int F(s) s ds`` (the 2D weights divided by 2 pi)."""
        return self.weights / (2.0 * np.pi)

    def mode_weights(self, k):
        """Weights for ``int (u cos k theta)(v cos k theta) dx`` applied to ``u * v``."""
        return self.weights if k == 0 else 0.5 * self.weights

    def same_as(self, other):
        return self is other or (
            other.n == self.n and np.array_equal(other.nodes, self.nodes)
        )

    def cumulative(self, values):
        """Running integral ``int_0^{r_i} F(s) s ds`` of nodal values ``F``.

        Works column-wise for 2D input of shape (N, m).
        """
        values = np.asarray(values, dtype=float)
        p = self._iw.shape[1]
        idx = self._istart[:, None] + np.arange(p)[None, :]
        if values.ndim == 1:
            pieces = np.einsum("ij,ij->i", self._iw, values[idx])
        else:
            pieces = np.einsum("ij,ijm->im", self._iw, values[idx])
        out = np.zeros_like(values)
        out[1:] = np.cumsum(pieces, axis=0)
        return out

    @cached_property
    def h_min(self):
        return float(np.min(np.diff(self.nodes)))

    def diff_matrix(self, order, parity=1, npts=_STENCIL):
        """Sparse derivative matrix of the given order.

        Near the origin the stencil uses mirrored nodes ``-r_j`` carrying the
        value ``parity * u_j`` (``parity = (-1)**k`` for mode k), so the
        formulas stay centred. Near ``R_max`` the stencil is one-sided.
        """
        key = (order, parity, npts)
        cache = self.__dict__.setdefault("_dcache", {})
        if key in cache:
            return cache[key]
        r = self.nodes
        n = len(r)
        npts = min(npts, n)
        ext = np.concatenate([-r[:0:-1], r])
        ext_idx = np.concatenate([np.arange(n - 1, 0, -1), np.arange(n)])
        ext_sgn = np.concatenate([np.full(n - 1, float(parity)), np.ones(n)])
        rows, cols, vals = [], [], []
        half = (npts - 1) // 2
        for i in range(n):
            e = i + n - 1
            lo = min(max(e - half, 0), len(ext) - npts)
            sl = slice(lo, lo + npts)
            w = fornberg_weights(r[i], ext[sl], order)[order]
            rows.extend([i] * npts)
            cols.extend(ext_idx[sl])
            vals.extend(w * ext_sgn[sl])
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        mat.sum_duplicates()
        cache[key] = mat
        return mat


def _product_weights(xi, R_max, stretch, p):
    """Interval weights for ``int F(s) s ds`` from p-point local interpolation.

    Interpolation is in the uniform mapping variable ``xi``; the Jacobian
    ``r dr/dxi`` goes into the weight, so graded grids keep positive weights.
    """
    n = len(xi)
    start = np.clip(np.arange(n - 1) - (p // 2 - 1), 0, n - p)
    xs = xi[start[:, None] + np.arange(p)[None, :]]
    gx, gw = np.polynomial.legendre.leggauss(max(4, (p + 2) // 2))
    a, b = xi[:-1], xi[1:]
    half = 0.5 * (b - a)
    t = (a + b)[:, None] * 0.5 + half[:, None] * gx[None, :]
    rt = R_max * t * ((1.0 - stretch) + stretch * t)
    jac = R_max * ((1.0 - stretch) + 2.0 * stretch * t)
    scale = half[:, None]
    basis = _lagrange_basis((xs - a[:, None]) / scale, (t - a[:, None]) / scale)
    iw = np.einsum("ngp,ng->np", basis, (gw[None, :] * half[:, None]) * rt * jac)
    q = np.zeros(n)
    np.add.at(q, start[:, None] + np.arange(p)[None, :], iw)
    return iw, start, q


def make_grid(N=DEFAULT_N, R_max=DEFAULT_R_MAX, stretch=0.0):
    """Build a radial grid on ``[0, R_max]``.

    ``stretch`` in [0, 1] grades nodes towards the origin through
    ``r = R_max * xi * ((1 - stretch) + stretch * xi)``; 0 is uniform.
    """
    if not isinstance(N, (int, np.integer)) or N < 2:
        raise ParameterError(f"node count must be an integer >= 2, got {N!r}")
    if not (R_max > 0 and math.isfinite(R_max)):
        raise ParameterError(f"R_max must be positive and finite, got {R_max!r}")
    if not 0.0 <= stretch <= 1.0:
        raise ParameterError(f"stretch must lie in [0, 1], got {stretch!r}")
    if stretch == 1.0 and N < 3:
        raise ParameterError("fully stretched grid needs N >= 3")
    xi = np.linspace(0.0, 1.0, int(N))
    r = R_max * xi * ((1.0 - stretch) + stretch * xi)
    r[-1] = R_max
    n = len(r)
    iw, start, q = _product_weights(xi, R_max, stretch, _STENCIL if n >= _STENCIL else 2)
    if np.any(q <= 0):
        # coarse, strongly graded grids: linear product weights are always positive
        iw, start, q = _product_weights(xi, R_max, stretch, 2)
    weights = 2.0 * np.pi * q
    for arr in (r, weights, iw):
        arr.setflags(write=False)
    return RadialGrid(nodes=r, weights=weights, r_max=float(R_max), stretch=float(stretch),
                      _iw=iw, _istart=start)


def grid_to_csv(grid, path):
    """Write the grid as CSV with columns r, weight."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["r", "weight"])
        for r, w in zip(grid.nodes, grid.weights):
            wr.writerow([repr(float(r)), repr(float(w))])


@dataclass(frozen=True, eq=False)
class ModeField:
    """Radial profile ``values`` attached to the angular mode ``cos(k theta)``."""

    grid: RadialGrid
    k: int
    values: np.ndarray

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 0:
            raise ModeError(f"angular index must be a nonnegative integer, got {self.k!r}")
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.nodes.shape:
            raise ParameterError(f"values shape {v.shape} does not match grid {self.grid.nodes.shape}")
        if not np.all(np.isfinite(v)):
            raise ParameterError("ModeField values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "k", int(self.k))

    @classmethod
    def from_function(cls, grid, func, k=0):
        return cls(grid, k, func(grid.nodes))

    def with_values(self, values):
        return ModeField(self.grid, self.k, values)

    def __add__(self, other):
        _check_compatible(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        _check_compatible(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar):
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


def _check_compatible(a, b):
    if not a.grid.same_as(b.grid):
        raise ParameterError("fields live on different grids")
    if a.k != b.k:
        raise ModeError(f"angular indices differ ({a.k} vs {b.k})")


def _as_field(obj, grid, k):
    if isinstance(obj, ModeField):
        if grid is not None and not obj.grid.same_as(grid):
            raise ParameterError("field and grid do not match")
        return obj
    if grid is None:
        raise ParameterError("a grid is required for raw arrays")
    return ModeField(grid, k, obj)


def integrate(field, grid=None):
    """``int_{R^2} field dx`` for a radial (k = 0) field."""
    field = _as_field(field, grid, 0)
    if field.k != 0:
        raise ModeError("only k = 0 fields have a nonzero plane integral")
    return float(np.dot(field.grid.weights, field.values))


def inner(u, v, density=None):
    """``int (u cos k theta)(v cos k theta) density dx`` for two fields of the same mode."""
    _check_compatible(u, v)
    w = u.grid.mode_weights(u.k)
    prod = u.values * v.values
    if density is not None:
        prod = prod * (density.values if isinstance(density, ModeField) else density)
    return float(np.dot(w, prod))


# ---------------------------------------------------------------- Green operators

def _kernel_integral(r, R, k):
    """Exact ``int_0^R G_k(r, s) s ds``."""
    if k == 0:
        return -0.5 * R * R * math.log(R) + 0.25 * R * R - 0.25 * r * r
    first = r * r / (k + 2)
    if k == 2:
        with np.errstate(divide="ignore", invalid="ignore"):
            second = np.where(r > 0, r * r * np.log(R / np.where(r > 0, r, 1.0)), 0.0)
    else:
        second = (r ** k * R ** (2 - k) - r * r) / (2 - k)
    return (first + second) / (2 * k)


def _offdiag_apply(grid, k, g):
    """``sum_{j != i} G_k(r_i, r_j) q_j g_j`` via prefix/suffix sums (g may be 2D)."""
    r = grid.nodes
    q = grid.sds
    g = np.asarray(g, dtype=float)
    qg = q * g if g.ndim == 1 else q[:, None] * g
    bshape = (-1,) if g.ndim == 1 else (-1, 1)

    def excl_prefix(a):
        out = np.zeros_like(a)
        out[1:] = np.cumsum(a[:-1], axis=0)
        return out

    def excl_suffix(a):
        out = np.zeros_like(a)
        out[:-1] = np.cumsum(a[::-1], axis=0)[::-1][1:]
        return out

    if k == 0:
        logr = np.log(np.where(r > 0, r, 1.0)).reshape(bshape)
        pre = excl_prefix(qg)
        suf = excl_suffix(logr * qg)
        return -logr * pre - suf
    rk = (r ** k).reshape(bshape)
    with np.errstate(divide="ignore"):
        rmk = np.where(r > 0, r, np.inf) ** (-k)
    rmk = rmk.reshape(bshape)
    pre = excl_prefix(rk * qg)
    suf = excl_suffix(rmk * qg)
    out = (rmk * pre + rk * suf) / (2.0 * k)
    out[0] = 0.0
    return out


def _diag_correction(grid, k):
    cache = grid.__dict__.setdefault("_gcache", {})
    if k not in cache:
        r = grid.nodes
        exact = _kernel_integral(r, grid.r_max, k)
        c = exact - _offdiag_apply(grid, k, np.ones_like(r))
        if k > 0:
            c[0] = 0.0
        c.setflags(write=False)
        cache[k] = c
    return cache[k]


def poisson_mode(w, k=None):
    """Solve ``-Delta (u cos k theta) = w cos k theta`` with the exact radial Green kernel.

    k = 0 uses ``G_0(r, s) = -log max(r, s)``, the angular average of
    ``-(1/2 pi) log|x - y|``; k >= 1 uses ``G_k = (min/max)**k / (2k)``. The
    quadrature subtracts ``w(r)`` before integrating across the kink at
    ``s = r`` and adds back the exact kernel integral, so the discrete operator
    is ``K diag(q) + diag(c)`` with ``K`` symmetric. Cost is O(N).
    """
    if k is None:
        k = w.k
    elif k != w.k:
        w = ModeField(w.grid, k, w.values)
    vals = w.values
    u = _offdiag_apply(w.grid, k, vals) + _diag_correction(w.grid, k) * vals
    if k > 0:
        u[0] = 0.0
    return ModeField(w.grid, k, u)


def green_matrix(grid, k):
    """Dense matrix of :func:`poisson_mode` for mode k (same discretization)."""
    r = grid.nodes
    n = len(r)
    if n > 8192:
        raise ParameterError("dense Green matrix refused for N > 8192")
    rmax = np.maximum.outer(r, r)
    rmin = np.minimum.outer(r, r)
    with np.errstate(divide="ignore", invalid="ignore"):
        if k == 0:
            K = -np.log(rmax)
        else:
            K = np.where(rmax > 0, (rmin / np.where(rmax > 0, rmax, 1.0)) ** k, 0.0) / (2.0 * k)
    np.fill_diagonal(K, 0.0)
    P = K * grid.sds[None, :]
    P[np.diag_indices(n)] = _diag_correction(grid, k)
    if k > 0:
        P[0, :] = 0.0
    return P


# ---------------------------------------------------------------- differential operators

def _lap_matrix(grid, k, npts=3):
    r = grid.nodes
    parity = 1 if k % 2 == 0 else -1
    D1 = grid.diff_matrix(1, parity, npts)
    D2 = grid.diff_matrix(2, parity, npts)
    with np.errstate(divide="ignore"):
        inv_r = np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0), 0.0)
    lap = D2 + sp.diags(inv_r) @ D1 - sp.diags(k * k * inv_r ** 2)
    lap = lap.tolil()
    if k == 0:
        lap[0, :] = 2.0 * D2[0, :]
    else:
        lap[0, :] = 0.0
    return lap.tocsr()


def laplacian_matrix(grid, k, npts=3):
    """Sparse matrix of ``-[u'' + u'/r - k^2 u / r^2]`` (second order for npts=3).

    At r = 0 the k = 0 row is ``-2 u''(0)`` (regularity ``u'(0) = 0``) and the
    k >= 1 row is zero (``u(0) = 0``). At ``R_max`` the stencil is one-sided.
    """
    cache = grid.__dict__.setdefault("_lcache", {})
    key = (k, npts)
    if key not in cache:
        cache[key] = -_lap_matrix(grid, k, npts)
    return cache[key]


def laplacian_mode(u, k=None):
    """Finite-difference ``-Delta`` of a mode field (second order)."""
    if k is None:
        k = u.k
    return ModeField(u.grid, k, laplacian_matrix(u.grid, k) @ u.values)


def derivative(u, k=None):
    """High-order radial derivative ``u'`` (six-point stencils, parity-aware at 0)."""
    if k is None:
        k = u.k
    parity = 1 if k % 2 == 0 else -1
    return u.grid.diff_matrix(1, parity) @ u.values


def gradient_energy(u, k=None):
    """``int_{R^2} |grad(u cos k theta)|^2 dx``.

    k = 0: ``2 pi int u'^2 r dr``; k >= 1: ``pi int (u'^2 + k^2 u^2 / r^2) r dr``.
    """
    if k is None:
        k = u.k
    r = u.grid.nodes
    du = derivative(u, k)
    if k == 0:
        return float(np.dot(u.grid.weights, du * du))
    with np.errstate(divide="ignore", invalid="ignore"):
        u_over_r = np.where(r > 0, u.values / np.where(r > 0, r, 1.0), 0.0)
    if k == 1:
        u_over_r[0] = du[0]
    return float(0.5 * np.dot(u.grid.weights, du * du + k * k * u_over_r ** 2))

