"""scikit-learn style wrappers around the functional core.

These are thin adapters so the stationary solver, the spectral computation,
the inequality deficits and the rate fit can be dropped into code written
against the estimator API (``get_params``/``set_params``, ``fit`` returning
``self``, fitted attributes with a trailing underscore).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import evolution, functionals, spectral
from .radial_core import ModeField, make_grid
from .stationary import solve_stationary


class StationarySolver(BaseEstimator, RegressorMixin):
    """Fit solves for ``n_M``; ``predict`` interpolates the density at radii.

    ``X`` passed to ``predict`` is a column of radii. ``fit`` ignores its
    arguments; they exist for API compatibility.
    """

    def __init__(self, M=1.0, N=2048, R_max=16.0, stretch=0.0, tol=1e-10):
        self.M = M
        self.N = N
        self.R_max = R_max
        self.stretch = stretch
        self.tol = tol

    def fit(self, X=None, y=None):
        grid = make_grid(self.N, self.R_max, self.stretch)
        self.state_ = solve_stationary(self.M, grid, tol=self.tol)
        self.residual_ = self.state_.residual
        self.n_iter_ = self.state_.iterations
        return self

    def predict(self, X):
        check_is_fitted(self, "state_")
        radii = check_array(X, ensure_2d=False).reshape(-1)
        return self.state_.density_at(radii)


class SpectrumEstimator(BaseEstimator):
    """Fit computes the lowest Q2/Q1 eigenvalues and kappa for modes ``0..k_max``.

    ``predict`` maps a column of mode indices to the lowest eigenvalue of
    each mode (on the complement of the kernel for k = 0).
    """

    def __init__(self, M=1.0, N=512, R_max=16.0, k_max=3, n_eigs=5):
        self.M = M
        self.N = N
        self.R_max = R_max
        self.k_max = k_max
        self.n_eigs = n_eigs

    def fit(self, X=None, y=None):
        st = solve_stationary(self.M, make_grid(self.N, self.R_max))
        self.results_ = {}
        for k in range(self.k_max + 1):
            mats = spectral.assemble_mode(k, st)
            self.results_[k] = spectral.eigen_gap(mats, st, n_eigs=self.n_eigs)
        self.eigenvalues_ = {k: r.eigenvalues for k, r in self.results_.items()}
        self.kappa_ = max(r.kappa for r in self.results_.values())
        self.kernel_angle_ = self.results_[0].kernel_angle
        self.state_ = st
        return self

    def predict(self, X):
        check_is_fitted(self, "results_")
        ks = check_array(X, ensure_2d=False, dtype=None).reshape(-1).astype(int)
        return np.array([self.results_[int(k)].eigenvalues[0] for k in ks])


class DeficitTransformer(BaseEstimator, TransformerMixin):
    """Map radial test functions (rows of nodal values) to inequality deficits.

    ``inequality`` is one of ``onofri_new``, ``onofri_classical``,
    ``poincare``, ``duality`` (radial ``phi``) or ``loghls``, ``loghls_nm``
    (rows are densities).
    """

    _KINDS = ("onofri_new", "onofri_classical", "poincare", "duality", "loghls", "loghls_nm")

    def __init__(self, M=1.0, N=1024, R_max=16.0, inequality="onofri_new", relative=False):
        self.M = M
        self.N = N
        self.R_max = R_max
        self.inequality = inequality
        self.relative = relative

    def fit(self, X=None, y=None):
        if self.inequality not in self._KINDS:
            raise ValueError(f"unsupported inequality {self.inequality!r}")
        self.state_ = solve_stationary(self.M, make_grid(self.N, self.R_max))
        self.n_features_in_ = self.N
        return self

    def _one(self, values):
        st = self.state_
        f = ModeField(st.grid, 0, values)
        kind = self.inequality
        if kind == "onofri_new":
            return functionals.onofri_deficit(f, st)
        if kind == "onofri_classical":
            return functionals.onofri_deficit(f, "classical")
        if kind == "poincare":
            return functionals.poincare_deficit(f, st)
        if kind == "duality":
            return functionals.legendre_gap(f, st)
        if kind == "loghls":
            return functionals.loghls_deficit(f)
        return functionals.free_energy_deficit(f, st)

    def transform(self, X):
        check_is_fitted(self, "state_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} nodal values per row, got {X.shape[1]}")
        out = []
        for row in X:
            d = self._one(row)
            out.append(d.deficit / d.scale if self.relative else d.deficit)
        return np.asarray(out).reshape(-1, 1)


class DecayRateRegressor(BaseEstimator, RegressorMixin):
    """Exponential fit ``y ~ A exp(-rate t)`` on a time window.

    ``X`` is a column of times, ``y`` the positive observable.
    """

    def __init__(self, window=(2.0, 6.0), floor=1e-13):
        self.window = window
        self.floor = floor

    def fit(self, X, y):
        t = check_array(X, ensure_2d=False).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        fit = evolution.fit_rate((t, y), "observable", self.window, self.floor)
        sel = (t >= self.window[0]) & (t <= self.window[1]) & (y > self.floor)
        self.rate_ = fit.rate
        self.r2_ = fit.r2
        self.log_amplitude_ = float(np.mean(np.log(y[sel]) + fit.rate * t[sel]))
        return self

    def predict(self, X):
        check_is_fitted(self, "rate_")
        t = check_array(X, ensure_2d=False).reshape(-1)
        return np.exp(self.log_amplitude_ - self.rate_ * t)
