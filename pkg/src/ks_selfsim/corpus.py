"""Deterministic seeded families of test functions for the property checks.

Three families are cycled through: Gaussian bumps in the radial variable,
polynomials times a Gaussian, and scaled special modes of a stationary state.
Non-radial entries are mode sums carrying the factor ``r^k`` so they are
smooth at the origin. Identical ``(seed, size)`` gives identical corpora.
"""

from __future__ import annotations

import numpy as np

from .radial_core import ModeField
from .stationary import special_modes

FAMILIES = ("bump", "polygauss", "special")


def _bump(rng, r):
    a = rng.uniform(-2.0, 2.0)
    c = rng.uniform(0.0, 4.0)
    s = rng.uniform(0.3, 2.0)
    return a * np.exp(-0.5 * ((r - c) / s) ** 2)


def _polygauss(rng, r):
    deg = int(rng.integers(0, 4))
    coef = rng.normal(0.0, 1.0, deg + 1) / np.arange(1, deg + 2)
    sigma = rng.uniform(0.7, 2.5)
    x = r / sigma
    return np.polyval(coef, x * x) * np.exp(-0.5 * x * x)


def _radial_profile(rng, r):
    return _bump(rng, r) if rng.random() < 0.5 else _polygauss(rng, r)


def phi_corpus(grid, seed, size=100, state=None, kmax=2):
    """List of ``(input_id, phi)``; ``phi`` is a ModeField or a list of them.

    Roughly a third of the entries are radial bumps, a third polynomial times
    Gaussian (some with added ``k <= kmax`` components), and, when ``state`` is
    given, the rest are scaled special modes. Amplitudes keep ``exp(phi)``
    well inside floating range and negligible beyond ``R_max``.
    """
    rng = np.random.default_rng(seed)
    r = grid.nodes
    modes = special_modes(state) if state is not None else None
    fams = FAMILIES if modes is not None else FAMILIES[:2]
    out = []
    for i in range(size):
        fam = fams[i % len(fams)]
        if fam == "bump":
            phi = ModeField(grid, 0, _bump(rng, r))
        elif fam == "polygauss":
            phi = [ModeField(grid, 0, _polygauss(rng, r))]
            for k in range(1, kmax + 1):
                if rng.random() < 0.5:
                    prof = _radial_profile(rng, r) * (r / 2.0) ** k
                    phi.append(ModeField(grid, k, prof))
            phi = phi[0] if len(phi) == 1 else phi
        else:
            which = int(rng.integers(0, 3))
            if which == 0:
                phi = modes.f01 * rng.uniform(0.01, 0.4)
            elif which == 1:
                phi = modes.f1 * rng.uniform(-2.0, 2.0)
            else:
                phi = [modes.f00 * rng.uniform(-0.5, 0.5),
                       ModeField(grid, 0, _bump(rng, r))]
        out.append((f"{fam}-{i:03d}", phi))
    return out


def density_corpus(grid, M, seed, size=100):
    """List of ``(input_id, n)`` with ``n >= 0`` radial of mass ``M`` on the grid."""
    rng = np.random.default_rng(seed)
    r = grid.nodes
    out = []
    for i in range(size):
        sigma = rng.uniform(0.5, 2.5)
        logn = -0.5 * (r / sigma) ** 2 + 0.5 * _radial_profile(rng, r)
        if i % 2:
            c = rng.uniform(0.5, 3.0)
            logn = np.logaddexp(logn, -0.5 * ((r - c) / rng.uniform(0.3, 1.0)) ** 2
                                + np.log(rng.uniform(0.1, 2.0)))
        g = np.exp(logn - logn.max())
        mass = float(np.dot(grid.weights, g))
        out.append((f"density-{i:03d}", ModeField(grid, 0, M * g / mass)))
    return out


def perturbation_corpus(grid, seed, size=20, k=0):
    """Smooth mode-``k`` fields ``r^k p(r^2) exp(-r^2 / 2 sigma^2)``."""
    rng = np.random.default_rng(seed)
    r = grid.nodes
    return [(f"pert-k{k}-{i:03d}", ModeField(grid, k, _polygauss(rng, r) * (r / 2.0) ** k
                                             + (0.0 if k else rng.normal())))
            for i in range(size)]
