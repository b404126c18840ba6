"""Matrices of the Gram, Q1 and Q2 forms per angular mode and their eigenproblems.

Everything is assembled in the Gram-scaled nodal basis ``v = D f`` with
``D = diag(sqrt(w_k n_M / M))``, so the ``L^2(dmu_M)`` Gram matrix is the
identity and no row is divided by the (tiny) tail of ``n_M``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DiscretizationError, ParameterError
from .functionals import apply_Lplus, local_operator
from .radial_core import ModeField, green_matrix, inner
from .stationary import kernel_gauge, special_modes, zero_mode

MAX_DENSE_N = 8192


@dataclass(frozen=True, eq=False)
class QuadFormMatrices:
    """Dense matrices of one angular mode in the scaled basis.

    ``basis`` records which nodes are active (node 0 is dropped for k >= 1,
    where every field vanishes at the origin) and the diagonal scaling ``D``.
    Nodal values are recovered as ``f = v / D``.
    """

    k: int
    Gram: np.ndarray
    Q1m: np.ndarray
    Q2m: np.ndarray
    basis: dict
    asym_Q2: float

    def to_scaled(self, f):
        vals = f.values if isinstance(f, ModeField) else np.asarray(f, dtype=float)
        return self.basis["D"] * vals[self.basis["active"]]

    def to_nodal(self, v):
        out = np.zeros(self.basis["N"])
        out[self.basis["active"]] = v / self.basis["D"]
        return out


@dataclass(frozen=True, eq=False)
class SpectralResult:
    k: int
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # scaled basis, Q1-orthonormal columns
    kernel_vector: np.ndarray | None = None  # scaled basis, unit Gram norm
    kernel_angle: float = float("nan")
    kappa: float = float("nan")
    q1_min_eig: float = float("nan")
    extra: dict = field(default_factory=dict)


def _scaling(state, k):
    grid = state.grid
    N = grid.n
    active = np.arange(N) if k == 0 else np.arange(1, N)
    logw = np.log(grid.mode_weights(k)[active])
    log_d = 0.5 * (logw + state.log_n[active] - math.log(state.M))
    return active, log_d


def _volume_ratio(state, k):
    """Control-volume weights of the transport operator over the mode-k quadrature weights."""
    r = state.grid.nodes
    h = np.diff(r)
    vol = np.empty(len(r))
    vol[1:-1] = r[1:-1] * 0.5 * (h[:-1] + h[1:])
    vol[-1] = r[-1] * 0.5 * h[-1]
    vol[0] = h[0] ** 2 / 8.0
    alpha = 2.0 * math.pi if k == 0 else math.pi
    return alpha * vol / state.grid.mode_weights(k)


def _product_asymmetry(Q1, Lh, IB, D, r, k, n_probe=6):
    """Relative antisymmetric part of ``A = Q1 L+`` on smooth probe fields.

    Probes ``r^(k + 2j)``, j < n_probe, Gram-orthonormalized. Tail nodes where
    ``n_M`` carries no weight would otherwise dominate a plain matrix norm.
    """
    X = np.column_stack([D * r ** (k + 2 * j) for j in range(n_probe)])
    X, _ = np.linalg.qr(X)
    AX = Q1 @ (-(Lh @ (IB @ X)))
    a = X.T @ AX
    return float(np.linalg.norm(a - a.T) / (2.0 * max(np.linalg.norm(a), 1e-300)))


def assemble_mode(k, state, gauge=None):
    """Assemble Gram, Q1 and Q2 for mode ``k``.

    ``Q2m`` uses the Dirichlet form ``(1/M) int n_M |grad(f - P(f n_M))|^2``,
    which equals ``Q1(f, L+ f)`` and is symmetric by construction. The relative
    antisymmetric part of the direct product ``A = Q1 L+`` on smooth probe
    fields is stored in ``asym_Q2`` as a consistency diagnostic.
    """
    k = int(k)
    if k < 0:
        raise ParameterError("mode index must be >= 0")
    N = state.grid.n
    if N > MAX_DENSE_N:
        raise ParameterError(f"dense assembly refused for N={N} > {MAX_DENSE_N}")
    active, log_d = _scaling(state, k)
    D = np.exp(log_d)
    n = state.n.values[active]
    P = green_matrix(state.grid, k)[np.ix_(active, active)]
    # B = D P diag(n) D^-1; n_j / D_j = sqrt(M n_j / w_j) computed in log form
    col = np.exp(state.log_n[active] - log_d)
    B = D[:, None] * P * col[None, :]
    B = 0.5 * (B + B.T)
    Q1 = -B
    Q1[np.diag_indices_from(Q1)] += 1.0
    if k == 0:
        kappa0 = kernel_gauge(state) if gauge is None else gauge
        Q1 += kappa0 * state.M * np.outer(D, D)
    L = local_operator(state, k).toarray()[np.ix_(active, active)]
    Lh = L * np.exp(log_d[:, None] - log_d[None, :])  # D L D^-1
    IB = np.eye(len(active)) - B
    asym = _product_asymmetry(Q1, Lh, IB, D, state.grid.nodes[active], k)
    # Dirichlet form: Q2 = (I - B)^T diag(rho) (-D L D^-1) (I - B), where
    # rho = control-volume weight / quadrature weight makes the middle factor symmetric
    rho = _volume_ratio(state, k)[active]
    S = -(rho[:, None] * Lh)
    S = 0.5 * (S + S.T)
    sym = IB.T @ S @ IB
    sym = 0.5 * (sym + sym.T)
    basis = {"N": N, "active": active, "D": D, "log_D": log_d, "n": n}
    return QuadFormMatrices(k=k, Gram=np.eye(len(active)), Q1m=Q1, Q2m=sym,
                            basis=basis, asym_Q2=asym)


def _complement(v):
    """Orthonormal basis of the Euclidean complement of ``v`` (Householder)."""
    u = v / np.linalg.norm(v)
    e = np.zeros_like(u)
    e[0] = 1.0
    s = 1.0 if u[0] >= 0 else -1.0
    h = u + s * e
    h /= np.linalg.norm(h)
    H = np.eye(len(u)) - 2.0 * np.outer(h, h)
    return H[:, 1:]


def _restricted(mats, state):
    """Q1 and Q2 on the admissible subspace, with the change of basis used."""
    if mats.k != 0:
        return mats.Q1m, mats.Q2m, None, None
    f00 = zero_mode(state)
    v00 = mats.to_scaled(f00)
    Z = _complement(v00)
    return Z.T @ mats.Q1m @ Z, Z.T @ mats.Q2m @ Z, Z, v00 / np.linalg.norm(v00)


def _angle(a, b):
    c = abs(float(np.dot(a, b))) / (np.linalg.norm(a) * np.linalg.norm(b))
    return math.acos(min(1.0, c))


def eigen_gap(mats, state, n_eigs=10, psd_tol=1e-8):
    """Lowest generalized eigenvalues of ``Q2 v = lambda Q1 v`` on the admissible subspace.

    For k = 0 the Q1 kernel is extracted first and compared with ``f00``;
    the problem is then restricted to the Gram complement of ``f00``.
    """
    q1_eigs, q1_vecs = sla.eigh(mats.Q1m, subset_by_index=[0, 1])
    scale = float(np.trace(mats.Q1m)) / len(mats.Q1m)
    kernel = None
    angle = float("nan")
    Q1r, Q2r, Z, v00 = _restricted(mats, state)
    if mats.k == 0:
        kernel = q1_vecs[:, 0]
        angle = _angle(kernel, v00)
    floor = float(sla.eigh(Q1r, eigvals_only=True, subset_by_index=[0, 0])[0])
    if floor <= psd_tol * scale:
        raise DiscretizationError(
            f"Q1 not positive on the admissible subspace for k={mats.k}: "
            f"min eigenvalue {floor:.3e}")
    m = min(n_eigs, len(Q1r))
    try:
        lam, vec = sla.eigh(Q2r, Q1r, subset_by_index=[0, m - 1])
    except np.linalg.LinAlgError as exc:
        raise DiscretizationError(f"generalized eigenproblem failed for k={mats.k}: {exc}") from exc
    if Z is not None:
        vec = Z @ vec
    kappa = 1.0 / floor
    return SpectralResult(k=mats.k, eigenvalues=lam, eigenvectors=vec,
                          kernel_vector=kernel, kernel_angle=angle, kappa=kappa,
                          q1_min_eig=float(q1_eigs[0]),
                          extra={"asym_Q2": mats.asym_Q2})


def kappa_mode(mats, state):
    """``sup ||f||^2_{L^2(dmu_M)} / Q1[f]`` over the admissible subspace of one mode."""
    Q1r = _restricted(mats, state)[0]
    return 1.0 / float(sla.eigh(Q1r, eigvals_only=True, subset_by_index=[0, 0])[0])


def estimate_kappa(state, k_max=3, matrices=None):
    """Return ``(kappa, per_mode)`` with ``kappa = max_k kappa_k`` for k <= k_max."""
    per_mode = {}
    for k in range(k_max + 1):
        mats = matrices.get(k) if matrices else None
        if mats is None:
            mats = assemble_mode(k, state)
        per_mode[k] = kappa_mode(mats, state)
    return max(per_mode.values()), per_mode


def eigen_residual(state, candidate, lam, k=None):
    """``||L+ f - lam f|| / ||f||`` in ``L^2(dmu_M)``, matrix-free."""
    f = candidate if k is None else ModeField(candidate.grid, k, candidate.values)
    res = apply_Lplus(f, state) - lam * f
    n = state.n.values
    return math.sqrt(inner(res, res, n) / inner(f, f, n))


# ---------------------------------------------------------------- cumulated form

def cumulated_spectrum(state, n_eigs=2):
    """Lowest eigenvalues of the radial problem written for cumulated perturbations.

    ``-(phi'' + (r - 1/r + m_M/r) phi' + n_M phi) = lambda phi`` with
    ``phi(0) = phi(R_max) = 0``: the mass-neutral radial spectrum of L+.
    Second-order three-point stencils; diagnostic only.
    """
    r = state.grid.nodes
    if len(r) > MAX_DENSE_N:
        raise ParameterError("dense cumulated spectrum refused for N > 8192")
    m = state.cumulated_mass
    n = state.n.values
    h = np.diff(r)
    N = len(r) - 2
    T = np.zeros((N, N))
    for j in range(N):
        i = j + 1
        a, b = h[i - 1], h[i]
        c2 = np.array([2 / (a * (a + b)), -2 / (a * b), 2 / (b * (a + b))])
        c1 = np.array([-b / (a * (a + b)), (b - a) / (a * b), a / (b * (a + b))])
        coef = c2 + (r[i] - 1.0 / r[i] + m[i] / r[i]) * c1
        coef[1] += n[i]
        for off, c in zip((-1, 0, 1), coef):
            if 0 <= j + off < N:
                T[j, j + off] = c
    ev = np.sort(np.real(sla.eigvals(-T)))
    return ev[:n_eigs]


# ---------------------------------------------------------------- reports

def special_mode_checks(state, results=None):
    """Matrix-free residuals of the three special modes."""
    modes = special_modes(state)
    return {
        "f00": eigen_residual(state, modes.f00, 0.0),
        "f01": eigen_residual(state, modes.f01, 2.0),
        "f1": eigen_residual(state, modes.f1, 1.0),
    }


def spectrum_to_csv(results, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k", "index", "lambda"])
        for res in results:
            for i, lam in enumerate(res.eigenvalues):
                wr.writerow([res.k, i, f"{float(lam):.17g}"])


def kappa_to_csv(rows, path):
    """``rows``: iterable of ``(k, kappa, N)``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k", "kappa", "N"])
        for k, kap, N in rows:
            wr.writerow([k, f"{float(kap):.17g}", int(N)])
