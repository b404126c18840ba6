import functools
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from ks_selfsim.radial_core import make_grid
from ks_selfsim.stationary import solve_stationary


@functools.lru_cache(maxsize=None)
def grid(N=512, R_max=16.0):
    return make_grid(N, R_max)


@functools.lru_cache(maxsize=None)
def state(M, N=512, tol=1e-12):
    return solve_stationary(M, grid(N), tol=tol)


def shoot(a, R=16.0, r0=1e-6):
    """Integrate n' = -n (m/r + r), m' = r n from n(0) = a; returns the dense solution."""
    def rhs(r, y):
        n, m = y
        return [-n * (m / r + r), r * n]
    y0 = [a * math.exp(-0.5 * r0 * r0), a * r0 * r0 / 2.0]
    return solve_ivp(rhs, (r0, R), y0, method="DOP853", rtol=1e-12, atol=1e-300,
                     dense_output=True)


def shooting_n0(M, R=16.0):
    """Central density of the radial stationary state of mass M (independent oracle)."""
    def miss(a):
        return 2.0 * math.pi * shoot(a, R).y[1, -1] - M
    return brentq(miss, 1e-8, 1e4, xtol=1e-14, rtol=1e-14)


@pytest.fixture(scope="session")
def st_4pi():
    return state(4.0 * math.pi)


@pytest.fixture(scope="session")
def st_1():
    return state(1.0)


# acceptance criterion id -> (passed, summary); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        ok, summary = ACCEPTANCE[cid]
        terminalreporter.write_line(f"criterion {cid:2d}: {'PASS' if ok else 'FAIL'}  {summary}")
