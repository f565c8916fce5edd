"""scikit-learn style front end for the shared-clock hitting-time model."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .inference import (
    check_observations,
    fit as _fit,
    identifiability_report,
    observation_log_density,
    wald_interval,
)
from .jumps import JumpFamily, parse_family
from .model import (
    ModelSpec,
    SeriesControl,
    hazard,
    marginal_cdf,
    outcome_probabilities,
    predicted_prob_uncensored,
    survival_y,
)
from .simulation import simulate_arrays


def _family(value) -> JumpFamily:
    return value if isinstance(value, JumpFamily) else parse_family(value)


def _split_xy(X, y):
    """Accept ``X`` as an (n, 2) array of (time, delta) or times with ``y`` as deltas."""
    if y is None:
        arr = check_array(X, dtype=np.float64, ensure_2d=True)
        if arr.shape[1] != 2:
            raise ValueError(f"X must have two columns (time, delta), got {arr.shape[1]}")
        return arr[:, 0], arr[:, 1]
    times = check_array(np.asarray(X, dtype=float).reshape(-1, 1), dtype=np.float64)[:, 0]
    return times, np.asarray(y).ravel()


class HittingTimeSurvival(BaseEstimator):
    """Maximum-likelihood estimator of (intensity, jump-x, jump-z) parameters.

    Parameters
    ----------
    jump_x, jump_z : str or JumpFamily
        Jump-size families, e.g. ``"bernoulli:0.5"``. The numeric value is only
        a template; free parameters are estimated (Dirac constants stay fixed).
    x, z : float
        Crossing thresholds, treated as known.
    variant : {"I", "II"}
        Whether ties are folded into ``delta = 1`` (I) or reported as 2 (II).
    multistarts, tol, max_iter, random_state
        Nelder-Mead controls; see :func:`hitcrest.inference.fit`.
    bounds : dict, optional
        Box per parameter name (``"lambda"``, ``"x.p"``, ``"z.rate"``, ...).
    epsilon : float
        Relative tail tolerance of the series.
    """

    def __init__(self, jump_x="exponential:1.0", jump_z="exponential:1.0", x=1.0, z=1.0,
                 variant="I", multistarts=8, tol=1e-8, max_iter=None, random_state=0,
                 bounds=None, epsilon=1e-10, init=None):
        self.jump_x = jump_x
        self.jump_z = jump_z
        self.x = x
        self.z = z
        self.variant = variant
        self.multistarts = multistarts
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state
        self.bounds = bounds
        self.epsilon = epsilon
        self.init = init

    def _template(self, lam=1.0) -> ModelSpec:
        return ModelSpec(lam, _family(self.jump_x), float(self.x), _family(self.jump_z),
                         float(self.z), self.variant)

    def _control(self):
        return SeriesControl(epsilon=self.epsilon)

    def fit(self, X, y=None):
        """Fit to observations ``(time, delta)``."""
        template = self._template()
        data = check_observations(_split_xy(X, y), template.variant)
        result = _fit(template, data, multistarts=self.multistarts, tolerance=self.tol,
                      max_iter=self.max_iter, seed=self.random_state, bounds=self.bounds,
                      control=self._control(), init=self.init)
        self.fit_result_ = result
        self.spec_ = result.spec
        self.theta_ = result.theta_hat
        self.param_names_ = list(result.param_names)
        self.covariance_ = result.covariance
        self.std_errors_ = result.std_errors
        self.loglik_ = result.loglik
        self.converged_ = result.converged
        self.n_obs_ = result.n_obs
        return self

    def score_samples(self, X, y=None):
        """Log density of each observation under the fitted model."""
        check_is_fitted(self, "spec_")
        times, deltas = check_observations(_split_xy(X, y), self.spec_.variant)
        return observation_log_density(self.spec_, times, deltas, self._control())[0]

    def score(self, X, y=None):
        """Mean log-likelihood."""
        return float(np.mean(self.score_samples(X, y)))

    def predict_survival(self, t):
        check_is_fitted(self, "spec_")
        return survival_y(self.spec_, np.asarray(t, dtype=float), self._control())

    def predict_hazard(self, t):
        check_is_fitted(self, "spec_")
        return hazard(self.spec_, np.asarray(t, dtype=float), self._control())

    def predict_cdf(self, t, which="T"):
        """Model CDF of the event time ``T`` or the censoring time ``C``."""
        check_is_fitted(self, "spec_")
        return marginal_cdf(self.spec_, which, np.asarray(t, dtype=float), self._control())

    def outcome_probabilities(self):
        check_is_fitted(self, "spec_")
        out = {f"delta_{k}": v for k, v in outcome_probabilities(self.spec_).items()}
        out["uncensored"] = predicted_prob_uncensored(self.spec_)
        return out

    def confidence_intervals(self, level=0.95):
        check_is_fitted(self, "fit_result_")
        return {name: wald_interval(self.fit_result_, i, level)
                for i, name in enumerate(self.param_names_)}

    def identifiability(self):
        template = self._template()
        return identifiability_report(template.family_x, template.family_z, template.variant,
                                      template.x, template.z)

    def sample(self, n_samples=1, random_state=0):
        """Draw ``(n_samples, 2)`` observations from the fitted model."""
        check_is_fitted(self, "spec_")
        y, delta = simulate_arrays(self.spec_, n_samples, int(random_state))
        return np.column_stack([y, delta])
