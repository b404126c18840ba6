import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ks_selfsim.estimators import (DecayRateRegressor, DeficitTransformer, SpectrumEstimator,
                                   StationarySolver)


def test_stationary_solver_fit_predict():
    est = StationarySolver(M=2.0, N=256)
    with pytest.raises(NotFittedError):
        est.predict([[0.0]])
    assert est.fit() is est
    assert est.residual_ <= 1e-10
    vals = est.predict(np.array([[0.0], [1.0], [100.0]]))
    assert vals[0] == pytest.approx(est.state_.n.values[0])
    assert vals[2] == 0.0
    params = est.get_params()
    assert params["M"] == 2.0 and params["N"] == 256
    assert clone(est).get_params() == params


def test_spectrum_estimator():
    est = SpectrumEstimator(M=4 * math.pi, N=512, k_max=1, n_eigs=2).fit()
    assert est.predict([1])[0] == pytest.approx(1.0, abs=1e-2)
    assert est.predict([0])[0] == pytest.approx(2.0, abs=1e-2)
    assert est.kappa_ > 1.0 and est.kernel_angle_ < 1e-2
    est.set_params(k_max=2)
    assert est.get_params()["k_max"] == 2


def test_deficit_transformer():
    tr = DeficitTransformer(M=2.0, N=256, inequality="onofri_new")
    r = np.linspace(0.0, 16.0, 256)
    X = np.vstack([np.zeros(256), 0.5 * np.exp(-r * r)])
    out = tr.fit_transform(X)
    assert out.shape == (2, 1)
    assert abs(out[0, 0]) <= 1e-12 and out[1, 0] > 0
    with pytest.raises(ValueError):
        tr.transform(np.zeros((1, 10)))
    with pytest.raises(ValueError):
        DeficitTransformer(inequality="nope").fit()
    rel = DeficitTransformer(M=2.0, N=256, inequality="poincare", relative=True).fit_transform(X)
    assert np.all(rel >= 0)


def test_decay_rate_regressor():
    t = np.linspace(0.0, 6.0, 25)
    y = 2.0 * np.exp(-1.5 * t)
    reg = DecayRateRegressor().fit(t.reshape(-1, 1), y)
    assert reg.rate_ == pytest.approx(1.5, abs=1e-10)
    assert np.allclose(reg.predict(t.reshape(-1, 1)), y, rtol=1e-9)
    with pytest.raises(NotFittedError):
        DecayRateRegressor().predict([[1.0]])
