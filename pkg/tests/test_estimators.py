import numpy as np
import pytest
from sklearn.base import clone

from msilab.core import InputError
from msilab.estimators import MsiEstimator, check_gain, check_trajectory


def test_params_roundtrip(plant):
    est = MsiEstimator(Bd=plant.Bd, d_bar=0.01, method="switched", h_cap=5)
    params = est.get_params()
    assert params["method"] == "switched" and params["h_cap"] == 5
    c = clone(est)
    assert c.get_params()["d_bar"] == 0.01 and not hasattr(c, "h_msi_")
    est.set_params(h_cap=7)
    assert est.h_cap == 7


def test_fit_predict(plant, gain, rec50):
    est = MsiEstimator(Bd=plant.Bd, K=gain.K, h_cap=14).fit(rec50)
    assert est.h_msi_ == 12 and est.score() == 12.0
    assert list(est.predict([gain.K, [[10.0, 10.0]]])) == [12, 0]
    est2 = MsiEstimator(Bd=plant.Bd, K=gain.K, h_cap=14).fit(rec50.states, rec50.inputs)
    assert est2.h_msi_ == 12


def test_design_mode(plant, rec50):
    est = MsiEstimator(Bd=plant.Bd, mode="design", h_cap=4).fit(rec50)
    assert est.h_msi_ == 4 and est.gain_.shape == (1, 2)


def test_validation_helpers(rec50):
    with pytest.raises(InputError):
        check_trajectory(np.zeros((3, 2)))
    with pytest.raises(InputError):
        check_trajectory(np.full((3, 2), np.nan), np.zeros((2, 1)))
    with pytest.raises(InputError):
        check_gain([[1.0, 2.0, 3.0]], 2, 1)
    assert check_trajectory(rec50) is rec50
    with pytest.raises(InputError):
        MsiEstimator().fit(rec50)
