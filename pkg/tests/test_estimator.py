import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import case_a
from hitcrest import HittingTimeSurvival, simulate_arrays


@pytest.fixture(scope="module")
def fitted():
    y, d = simulate_arrays(case_a(), 200, seed=42)
    est = HittingTimeSurvival("bernoulli:0.5", "dirac:1", x=7, z=17, random_state=1)
    return est.fit(np.column_stack([y, d])), y, d


def test_params_roundtrip():
    est = HittingTimeSurvival("exponential:1", "poisson:2", x=3, z=4, variant="II", tol=1e-6)
    params = est.get_params()
    assert params["jump_z"] == "poisson:2" and params["variant"] == "II"
    other = clone(est).set_params(multistarts=3)
    assert other.multistarts == 3 and est.multistarts == 8


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        HittingTimeSurvival().predict_survival([1.0])


def test_fit_attributes(fitted):
    est, y, d = fitted
    assert est.converged_
    assert est.param_names_ == ["lambda", "x.p"]
    assert est.theta_.shape == (2,) and est.std_errors_.shape == (2,)
    assert est.n_obs_ == 200


def test_times_and_deltas_as_separate_arguments(fitted):
    est, y, d = fitted
    assert est.score(y, d) == pytest.approx(est.score(np.column_stack([y, d])))
    assert est.score(np.column_stack([y, d])) == pytest.approx(est.loglik_, rel=1e-12)
    assert est.score_samples(y, d).shape == (200,)


def test_predictions(fitted):
    est, _, _ = fitted
    t = np.linspace(0, 30, 31)
    s = est.predict_survival(t)
    assert s[0] == 1.0 and np.all(np.diff(s) <= 0)
    assert np.all(est.predict_hazard(t) >= 0)
    assert est.predict_cdf(t, "C")[0] == 0.0
    probs = est.outcome_probabilities()
    assert probs["delta_0"] + probs["delta_1"] == pytest.approx(1.0)
    ci = est.confidence_intervals()
    lo, hi = ci["lambda"]
    assert lo < est.theta_[0] < hi
    assert est.identifiability().hypothesis == "H1"
    assert est.sample(5, random_state=3).shape == (5, 2)


def test_input_validation():
    est = HittingTimeSurvival("bernoulli:0.5", "dirac:1", x=7, z=17)
    with pytest.raises(ValueError, match="two columns"):
        est.fit(np.ones((5, 3)))
    with pytest.raises(ValueError, match="delta"):
        est.fit(np.array([[1.0, 2.0], [2.0, 0.0]]))
    with pytest.raises(ValueError):
        est.fit(np.array([[np.nan, 1.0]]))
