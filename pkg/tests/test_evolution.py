import functools
import math

import numpy as np
import pytest

from ks_selfsim.errors import DomainError, FitError, ParameterError
from ks_selfsim.evolution import (CumulatedState, EvolutionTrace, cumulated_rhs,
                                  density_from_cumulated, evolve_linearized_mode,
                                  evolve_nonlinear, fit_rate, rates_to_csv,
                                  stationary_rhs_residual, trace_to_csv)
from ks_selfsim.functionals import q1
from ks_selfsim.radial_core import ModeField, integrate
from ks_selfsim.stationary import translation_mode, zero_mode

from conftest import grid, state

M = 2 * math.pi


def gaussian(g, mass, sigma):
    r = g.nodes
    return ModeField(g, 0, mass * np.exp(-0.5 * (r / sigma) ** 2) / (2 * math.pi * sigma ** 2))


@functools.lru_cache(maxsize=None)
def gaussian_run(N=512, dt=0.25):
    st = state(M, N)
    return evolve_nonlinear(gaussian(st.grid, M, 1.5), st, T=6.0, dt=dt)


def test_cumulated_round_trip():
    st = state(M, 1024)
    n = density_from_cumulated(st.grid, st.cumulated_mass)
    sel = st.grid.nodes < 8
    assert np.max(np.abs(n - st.n.values)[sel]) <= 1e-6 * st.n.values[0]
    cs = CumulatedState(st.grid, st.cumulated_mass, 0.0)
    assert cs.M == pytest.approx(M, rel=1e-12)
    assert integrate(cs.density()) == pytest.approx(M, rel=1e-5)


def test_stationary_residual_is_small_and_converges():
    a = stationary_rhs_residual(state(M, 512))
    b = stationary_rhs_residual(state(M, 1024))
    assert a <= 1e-6 and b < a
    assert cumulated_rhs(state(M).grid, state(M).cumulated_mass).shape == (512,)


@pytest.mark.parametrize("balanced,N", [(True, 512), (False, 2048)])
def test_stationary_state_is_a_fixed_point(balanced, N):
    st = state(M, N)
    tr = evolve_nonlinear(st.n, st, T=5.0, dt=0.5, balanced=balanced)
    # the t = 0 value is the round-trip error of differentiating m_M
    assert np.max(tr.l1_dist) <= 1e-8
    if balanced:
        assert np.ptp(tr.l1_dist) <= 1e-11
    assert np.max(np.abs(tr.mass - tr.mass[0])) <= 1e-10 * M


def test_gaussian_relaxes_with_expected_rates():
    tr = gaussian_run()
    d = tr.diagnostics
    assert np.max(np.abs(tr.mass - M)) <= 1e-8 * M
    assert d["max_free_energy_increase"] <= 1e-10
    assert d["min_density"] >= -1e-12
    assert np.all(np.diff(tr.l1_dist) < 0)
    assert fit_rate(tr, "l1_dist").rate == pytest.approx(2.0, abs=0.02)
    assert fit_rate(tr, "q1").rate == pytest.approx(4.0, abs=0.04)
    assert fit_rate(tr, "free_energy", window=(1.0, 4.0)).rate == pytest.approx(4.0, abs=0.1)


def test_sampling_interval_does_not_change_the_answer():
    a = gaussian_run(dt=0.25).final.m
    b = gaussian_run(dt=0.5).final.m
    assert np.max(np.abs(a - b)) <= 1e-6 * M / (2 * math.pi)


def test_nonlinear_rejects_bad_input():
    st = state(M)
    g = st.grid
    with pytest.raises(ParameterError):
        evolve_nonlinear(ModeField(g, 1, g.nodes * st.n.values), st, 1.0, 0.5)
    with pytest.raises(DomainError):
        evolve_nonlinear(st.n * -1.0, st, 1.0, 0.5)
    with pytest.raises(ParameterError):
        evolve_nonlinear(st.n * 1.1, st, 1.0, 0.5)
    with pytest.raises(ParameterError):
        evolve_nonlinear(st.n, st, 1.0, 0.3)
    with pytest.raises(ParameterError):
        evolve_nonlinear(gaussian(grid(256), M, 1.0), st, 1.0, 0.5)
    with pytest.raises(DomainError, match="8 pi"):
        evolve_nonlinear(gaussian(g, 8.1 * math.pi, 1.0), st, 1.0, 0.5, mass_tol=10.0)


def test_linearized_translation_mode_decays_at_rate_one():
    st = state(4 * math.pi)
    g = st.grid
    f0 = ModeField(g, 1, g.nodes * np.exp(-0.25 * g.nodes ** 2))
    tr = evolve_linearized_mode(f0, st, T=6.0, dt=0.25)
    # Q1 is quadratic, so it decays at twice the eigenvalue
    assert fit_rate(tr, "q1").rate == pytest.approx(2.0, abs=0.01)
    assert np.all(tr.mass == 0.0)


def test_linearized_radial_mode_decays_at_rate_two():
    st = state(4 * math.pi)
    g = st.grid
    f0 = ModeField(g, 0, np.exp(-0.5 * g.nodes ** 2))
    tr = evolve_linearized_mode(f0, st, T=6.0, dt=0.25)
    assert fit_rate(tr, "q1").rate == pytest.approx(4.0, abs=0.02)
    assert np.all(np.diff(tr.free_energy) <= 1e-14)


def test_linearized_zero_mode_is_removed_or_invariant():
    st = state(4 * math.pi)
    f00 = zero_mode(st)
    proj = evolve_linearized_mode(f00, st, T=1.0, dt=0.25)
    assert np.max(proj.q1) <= 1e-6 * q1(ModeField(st.grid, 0, np.ones(st.grid.n)), st)
    kern = evolve_linearized_mode(f00, st, T=1.0, dt=0.25, project=False)
    assert np.max(kern.q1) <= 1e-6
    n = st.n.values
    w = st.grid.weights
    diff = kern.final.values - f00.values
    assert math.sqrt(np.dot(w, diff ** 2 * n) / np.dot(w, f00.values ** 2 * n)) <= 1e-3


def test_linearized_perturbation_mass_drift_is_second_order():
    drift = []
    for N in (256, 512):
        st = state(4 * math.pi, N)
        f0 = zero_mode(st) + ModeField(st.grid, 0, np.exp(-0.5 * st.grid.nodes ** 2))
        tr = evolve_linearized_mode(f0, st, T=2.0, dt=0.5, project=False)
        drift.append(np.max(np.abs(tr.mass - tr.mass[0])) / abs(tr.mass[0]))
        assert tr.q1[-1] <= 1e-2 * tr.q1[0]
    assert drift[1] <= 1e-3
    assert drift[0] / drift[1] > 3.0


def test_linear_and_nonlinear_flows_agree_for_small_perturbations():
    st = state(M)
    g = st.grid
    b = np.exp(-0.5 * g.nodes ** 2)
    f = ModeField(g, 0, b - integrate(st.n.with_values(b * st.n.values)) / M)
    eps = 1e-3
    nl = evolve_nonlinear(st.n.with_values(st.n.values * (1 + eps * f.values)), st, T=2.0, dt=0.5)
    lin = evolve_linearized_mode(f, st, T=2.0, dt=0.5)
    ratio = nl.q1 / (eps ** 2 * lin.q1)
    assert np.max(np.abs(ratio - 1.0)) <= 1e-2


def test_translation_mode_is_preserved_in_shape():
    st = state(1.0)
    f1 = translation_mode(st)
    tr = evolve_linearized_mode(f1, st, T=1.0, dt=0.25)
    assert tr.q1[-1] == pytest.approx(math.exp(-2.0) * q1(f1, st), rel=1e-2)


def test_fit_rate_on_synthetic_data():
    t = np.linspace(0, 6, 25)
    y = 3.0 * np.exp(-2.5 * t)
    fit = fit_rate((t, y), "synthetic")
    assert abs(fit.rate - 2.5) <= 1e-10
    assert fit.r2 == pytest.approx(1.0)
    assert fit.samples == 17
    with pytest.raises(FitError):
        fit_rate((t, y), window=(5.0, 5.5))
    with pytest.raises(FitError):
        fit_rate((t, np.zeros_like(t)))
    tr = EvolutionTrace(t, t, y, y, y, {}, None)
    with pytest.raises(ParameterError):
        fit_rate(tr, "entropy")


def test_trace_and_rates_csv(tmp_path):
    tr = gaussian_run()
    p = tmp_path / "trace.csv"
    trace_to_csv(tr, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,mass,free_energy,q1,l1_dist"
    assert len(lines) == 26
    assert float(lines[-1].split(",")[4]) == tr.l1_dist[-1]
    q = tmp_path / "rates.csv"
    rates_to_csv([fit_rate(tr, "q1")], q)
    assert q.read_text().splitlines()[0] == "observable,rate,window_lo,window_hi,r2"
