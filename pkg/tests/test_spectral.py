import math

import numpy as np
import pytest

from ks_selfsim.errors import DiscretizationError, ParameterError
from ks_selfsim.functionals import q1, q1_form, q2
from ks_selfsim.radial_core import ModeField
from ks_selfsim.spectral import (assemble_mode, cumulated_spectrum, eigen_gap, eigen_residual,
                                 estimate_kappa, kappa_mode, kappa_to_csv, special_mode_checks,
                                 spectrum_to_csv)
from ks_selfsim.stationary import dilation_mode, translation_mode, zero_mode

from conftest import state

_CACHE = {}


def mats(M, k, N=512):
    key = (M, k, N)
    if key not in _CACHE:
        _CACHE[key] = assemble_mode(k, state(M, N))
    return _CACHE[key]


def result(M, k, N=512):
    key = ("res", M, k, N)
    if key not in _CACHE:
        _CACHE[key] = eigen_gap(mats(M, k, N), state(M, N), n_eigs=4)
    return _CACHE[key]


def test_gram_is_identity_and_constant_maps_correctly():
    m = mats(1.0, 0)
    assert np.array_equal(m.Gram, np.eye(512))
    st = state(1.0)
    one = ModeField(st.grid, 0, np.ones(512))
    v = m.to_scaled(one)
    # ||1||^2 in L^2(dmu_M) is one
    assert abs(v @ v - 1.0) <= 1e-12
    assert np.allclose(m.to_nodal(v), 1.0, rtol=1e-12)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_q1_matrix_matches_matrix_free_form(k):
    st = state(4 * math.pi)
    m = mats(4 * math.pi, k)
    r = st.grid.nodes
    rng = np.random.default_rng(k)
    for _ in range(3):
        c = rng.normal(size=3)
        f = ModeField(st.grid, k, r ** k * np.polyval(c, r * r) * np.exp(-0.3 * r * r))
        g = ModeField(st.grid, k, r ** k * np.exp(-0.5 * r * r))
        u, w = m.to_scaled(f), m.to_scaled(g)
        assert abs(u @ m.Q1m @ w - q1_form(f, g, st)) <= 1e-10 * math.sqrt(q1(f, st) * q1(g, st))


@pytest.mark.parametrize("k", [0, 1])
def test_q2_matrix_matches_product_form(k):
    st = state(2.0, 1024)
    m = mats(2.0, k, 1024)
    r = st.grid.nodes
    f = ModeField(st.grid, k, r ** k * (1 + 0.5 * r * r) * np.exp(-0.5 * r * r))
    v = m.to_scaled(f)
    assert abs(v @ m.Q2m @ v - q2(f, st)) <= 1e-3 * q2(f, st)


@pytest.mark.parametrize("M", [1.0, 4 * math.pi, 7.5])
def test_lowest_eigenvalues_are_one_and_two(M):
    r1 = result(M, 1, 1024)
    r0 = result(M, 0, 1024)
    assert abs(r1.eigenvalues[0] - 1.0) <= 1e-3
    assert abs(r0.eigenvalues[0] - 2.0) <= 2e-3
    assert r0.kernel_angle <= 1e-3


def test_higher_modes_exceed_their_index():
    for k in (2, 3):
        assert result(4 * math.pi, k).eigenvalues[0] >= k - 1e-3


def test_small_mass_recovers_ornstein_uhlenbeck_spectrum():
    # at M -> 0 the eigenvalues in mode k tend to k + 2j
    M = 1e-3
    for k in (0, 1, 2):
        lam = result(M, k).eigenvalues[:3]
        expected = np.array([k + 2 * j for j in range(3)], dtype=float) + (2.0 if k == 0 else 0.0)
        assert np.max(np.abs(lam - expected)) <= 1e-2


def test_eigenvalues_converge_on_refinement():
    a = result(4 * math.pi, 0, 512).eigenvalues[1]
    b = result(4 * math.pi, 0, 1024).eigenvalues[1]
    assert abs(a - b) <= 1e-2 * b


def test_asymmetry_diagnostic_is_second_order():
    vals = [mats(4 * math.pi, 0, N).asym_Q2 for N in (256, 512, 1024)]
    assert vals[2] <= 1e-4
    assert vals[0] / vals[1] > 3.0 and vals[1] / vals[2] > 3.0


def test_kernel_vector_and_q1_floor():
    res = result(4 * math.pi, 0)
    assert abs(res.q1_min_eig) <= 1e-5
    m = mats(4 * math.pi, 0)
    v = res.kernel_vector
    assert abs(v @ m.Q1m @ v) <= 1e-5


def test_eigenvectors_are_q1_orthonormal():
    res = result(2.0, 1)
    m = mats(2.0, 1)
    V = res.eigenvectors
    assert np.allclose(V.T @ m.Q1m @ V, np.eye(V.shape[1]), atol=1e-8)
    assert np.allclose(V.T @ m.Q2m @ V, np.diag(res.eigenvalues), atol=1e-8)


def test_lowest_k1_eigenvector_is_translation():
    st = state(4 * math.pi)
    res = result(4 * math.pi, 1)
    m = mats(4 * math.pi, 1)
    v = res.eigenvectors[:, 0]
    t = m.to_scaled(translation_mode(st))
    cos = abs(v @ t) / (np.linalg.norm(v) * np.linalg.norm(t))
    assert cos >= 1 - 1e-6


def test_lowest_k0_eigenvector_is_dilation_up_to_kernel():
    st = state(4 * math.pi)
    m = mats(4 * math.pi, 0)
    v = result(4 * math.pi, 0).eigenvectors[:, 0]
    f = m.to_scaled(dilation_mode(st))
    z = m.to_scaled(zero_mode(st))
    basis, _ = np.linalg.qr(np.column_stack([f, z]))
    resid = v - basis @ (basis.T @ v)
    assert np.linalg.norm(resid) <= 1e-3 * np.linalg.norm(v)


def test_kappa_values_and_refinement():
    st = state(4 * math.pi)
    kap, per = estimate_kappa(st, k_max=2, matrices={k: mats(4 * math.pi, k) for k in range(3)})
    assert kap == max(per.values())
    assert per[1] == pytest.approx(result(4 * math.pi, 1).kappa)
    assert all(v >= 1.0 for v in per.values())
    fine = kappa_mode(mats(4 * math.pi, 1, 1024), state(4 * math.pi, 1024))
    assert abs(per[1] - fine) <= 0.02 * fine


def test_kappa_small_mass_tends_to_one():
    # Q1 -> L^2(dmu_M) norm as M -> 0
    kap, _ = estimate_kappa(state(1e-3), k_max=1)
    assert 1.0 <= kap <= 1.01


def test_eigen_residual_matrix_free():
    st = state(4 * math.pi, 1024)
    assert eigen_residual(st, translation_mode(st), 1.0) <= 1e-2
    assert eigen_residual(st, dilation_mode(st), 1.0) > 0.1
    chk = special_mode_checks(st)
    assert set(chk) == {"f00", "f01", "f1"}
    assert max(chk.values()) <= 1e-2


def test_cumulated_spectrum_cross_check():
    lam = cumulated_spectrum(state(4 * math.pi, 1024))
    assert abs(lam[0] - 2.0) <= 1e-3
    fine = result(4 * math.pi, 0, 1024).eigenvalues[1]
    assert abs(lam[1] - fine) <= 2e-2 * fine


def test_indefinite_q1_is_reported():
    st = state(4 * math.pi)
    bad = assemble_mode(0, st, gauge=-10.0)
    with pytest.raises(DiscretizationError):
        eigen_gap(bad, st)


def test_invalid_mode_and_size():
    with pytest.raises(ParameterError):
        assemble_mode(-1, state(1.0))


def test_spectral_csv(tmp_path):
    res = [result(2.0, 0), result(2.0, 1)]
    p = tmp_path / "spectrum.csv"
    spectrum_to_csv(res, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "k,index,lambda"
    assert len(lines) == 1 + 8
    assert float(lines[5].split(",")[2]) == res[1].eigenvalues[0]
    q = tmp_path / "kappa.csv"
    kappa_to_csv([(0, 1.5, 512)], q)
    assert q.read_text().splitlines() == ["k,kappa,N", "0,1.5,512"]
