import numpy as np

from ks_selfsim.corpus import FAMILIES, density_corpus, perturbation_corpus, phi_corpus
from ks_selfsim.radial_core import ModeField, integrate

from conftest import grid, state


def _flatten(phi):
    return phi if isinstance(phi, list) else [phi]


def test_phi_corpus_is_deterministic_and_seed_dependent():
    st = state(2.0)
    a = phi_corpus(st.grid, 7, size=12, state=st)
    b = phi_corpus(st.grid, 7, size=12, state=st)
    c = phi_corpus(st.grid, 8, size=12, state=st)
    assert [i for i, _ in a] == [i for i, _ in b]
    for (_, p), (_, q) in zip(a, b):
        for u, v in zip(_flatten(p), _flatten(q)):
            assert u.k == v.k and np.array_equal(u.values, v.values)
    assert any(not np.array_equal(_flatten(p)[0].values, _flatten(q)[0].values)
               for (_, p), (_, q) in zip(a, c))


def test_phi_corpus_families_and_regularity():
    st = state(2.0)
    items = phi_corpus(st.grid, 1, size=30, state=st, kmax=2)
    assert len(items) == 30
    fams = {ident.split("-")[0] for ident, _ in items}
    assert fams == set(FAMILIES)
    for _, phi in items:
        for f in _flatten(phi):
            assert np.all(np.isfinite(f.values))
            assert f.k <= 2
            if f.k > 0:
                assert f.values[0] == 0.0
    plain = phi_corpus(grid(256), 1, size=6)
    assert {ident.split("-")[0] for ident, _ in plain} == set(FAMILIES[:2])


def test_density_corpus_mass_and_sign():
    g = grid(512)
    items = density_corpus(g, 3.0, seed=2, size=10)
    for _, n in items:
        assert np.all(n.values >= 0)
        assert abs(integrate(n) - 3.0) <= 1e-12 * 3.0
    again = density_corpus(g, 3.0, seed=2, size=10)
    assert all(np.array_equal(a.values, b.values) for (_, a), (_, b) in zip(items, again))


def test_perturbation_corpus_modes():
    g = grid(256)
    for k in (0, 1, 3):
        items = perturbation_corpus(g, 4, size=5, k=k)
        assert len(items) == 5
        for ident, f in items:
            assert isinstance(f, ModeField) and f.k == k
            assert ident.startswith(f"pert-k{k}-")
