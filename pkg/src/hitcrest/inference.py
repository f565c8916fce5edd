"""Maximum-likelihood fitting, sandwich covariance and identifiability checks."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .jumps import FamilyClass, JumpFamily
from .model import (
    DEFAULT_CONTROL,
    ModelSpec,
    ModelVariant,
    SeriesControl,
    TruncationError,
    _sequence,
    log_outcome_density,
    log_series,
    outcome_probabilities,
    outcome_sequence_name,
    predicted_prob_uncensored,
    prob_equal,
)
from .simulation import DegeneracyWarning

LOG_TINY = math.log(1e-300)
PENALTY = 1000.0
EPS = np.finfo(float).eps

__all__ = [
    "FitResult", "IdentifiabilityReport", "ParamBox", "check_observations", "fit",
    "identifiability_report", "information_matrices", "log_likelihood",
    "observation_log_density", "predicted_prob_uncensored", "sandwich_covariance",
    "wald_interval",
]


class IdentifiabilityWarning(UserWarning):
    """The intensity is not identified for this family pair under Model I."""


class BoundaryWarning(UserWarning):
    """The optimum sits on the edge of the parameter box."""


class SingularInformationError(np.linalg.LinAlgError):
    """The Hessian-based information matrix cannot be inverted reliably."""


class NotConvergedError(RuntimeError):
    pass


# ------------------------------------------------------------------ data

def check_observations(data, variant=ModelVariant.I):
    """Validate observations and return ``(y, delta)`` arrays.

    Accepts a sequence of :class:`Observation`, a pair ``(y, delta)`` of
    arrays, or an ``(n, 2)`` array.
    """
    variant = ModelVariant.parse(variant)
    if isinstance(data, tuple) and len(data) == 2:
        y, delta = data
    elif isinstance(data, np.ndarray):
        arr = np.asarray(data, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError(f"expected an (n, 2) array of (y, delta), got shape {arr.shape}")
        y, delta = arr[:, 0], arr[:, 1]
    else:
        data = list(data)
        y = [obs.y for obs in data]
        delta = [obs.delta for obs in data]
    y = np.asarray(y, dtype=float).ravel()
    delta_raw = np.asarray(delta).ravel()
    if y.size == 0:
        raise ValueError("no observations")
    if y.shape != delta_raw.shape:
        raise ValueError("y and delta must have the same length")
    if np.any(~np.isfinite(y)) or np.any(y < 0):
        bad = int(np.flatnonzero(~(np.isfinite(y) & (y >= 0)))[0])
        raise ValueError(f"observation {bad}: time must be finite and >= 0, got {y[bad]!r}")
    delta_f = delta_raw.astype(float)
    if np.any(delta_f != np.round(delta_f)):
        bad = int(np.flatnonzero(delta_f != np.round(delta_f))[0])
        raise ValueError(f"observation {bad}: delta must be an integer, got {delta_raw[bad]!r}")
    delta = delta_f.astype(np.int64)
    invalid = ~np.isin(delta, variant.deltas)
    if np.any(invalid):
        bad = int(np.flatnonzero(invalid)[0])
        raise ValueError(f"observation {bad}: delta={delta[bad]} is not valid under "
                         f"Model {variant.value} (allowed {variant.deltas})")
    return y, delta


# ------------------------------------------------------------ parameter box

_TRANSFORMS = {
    "log": (np.log, np.exp),
    "logit": (lambda p: np.log(p) - np.log1p(-p), lambda u: 1.0 / (1.0 + np.exp(-u))),
}


@dataclass(frozen=True)
class ParamBox:
    """Box bounds and optimizer transforms for ``(lam, x-params, z-params)``."""

    names: tuple
    lower: np.ndarray
    upper: np.ndarray
    transforms: tuple

    @classmethod
    def for_template(cls, template: ModelSpec, bounds: Optional[dict] = None) -> "ParamBox":
        bounds = dict(bounds or {})
        names = tuple(template.param_names)
        defaults = ([(1e-3, 1e3)] + list(template.family_x.default_bounds)
                    + list(template.family_z.default_bounds))
        unknown = set(bounds) - set(names)
        if unknown:
            raise ValueError(f"bounds given for unknown parameter(s) {sorted(unknown)}; "
                             f"parameters are {list(names)}")
        pairs = [tuple(bounds.get(name, default)) for name, default in zip(names, defaults)]
        lower = np.array([p[0] for p in pairs], dtype=float)
        upper = np.array([p[1] for p in pairs], dtype=float)
        transforms = (("log",) + tuple(template.family_x.transforms)
                      + tuple(template.family_z.transforms))
        box = cls(names, lower, upper, transforms)
        box._validate()
        return box

    def _validate(self):
        if np.any(self.lower >= self.upper):
            raise ValueError("every lower bound must be below its upper bound")
        for lo, hi, kind, name in zip(self.lower, self.upper, self.transforms, self.names):
            if lo <= 0 or (kind == "logit" and hi >= 1):
                raise ValueError(f"bounds ({lo}, {hi}) for {name} leave the parameter domain")

    @property
    def dim(self) -> int:
        return len(self.names)

    def to_free(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.array([_TRANSFORMS[k][0](v) for k, v in zip(self.transforms, theta)])

    def from_free(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.array([_TRANSFORMS[k][1](v) for k, v in zip(self.transforms, u)])

    @property
    def free_bounds(self) -> list:
        return list(zip(self.to_free(self.lower), self.to_free(self.upper)))

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))


# ------------------------------------------------------------- likelihood

def observation_log_density(spec: ModelSpec, y, delta, control: SeriesControl = DEFAULT_CONTROL,
                            n_terms: Optional[int] = None):
    """Per-observation log density with the zero-density penalty applied.

    Returns ``(values, n_penalized)``. Densities below 1e-300 are floored at
    ``log(1e-300) - PENALTY`` so the objective stays finite.
    """
    raw = log_outcome_density(spec, y, delta, control, n_terms)
    penalized = ~(raw >= LOG_TINY)
    values = np.where(np.isnan(raw), LOG_TINY - PENALTY, np.maximum(raw, LOG_TINY - PENALTY))
    return values, int(penalized.sum())


def log_likelihood(template: ModelSpec, theta, data, control: SeriesControl = DEFAULT_CONTROL,
                   n_terms: Optional[int] = None) -> float:
    """Mean log density of ``data`` at parameters ``theta``."""
    y, delta = check_observations(data, template.variant)
    spec = template.with_theta(theta)
    values, n_bad = observation_log_density(spec, y, delta, control, n_terms)
    if n_bad:
        warnings.warn(f"{n_bad} observation(s) have density below 1e-300 at theta={list(theta)}",
                      RuntimeWarning, stacklevel=2)
    return float(np.mean(values))


def _n_terms_for(spec: ModelSpec, y, delta, epsilon=1e-15) -> int:
    """Series length that resolves every observation to ``epsilon``, with margin."""
    control = SeriesControl(epsilon=epsilon)
    needed = 0
    for d in np.unique(delta):
        seq = _sequence(spec, outcome_sequence_name(spec.variant, int(d)))
        ts = y[delta == d]
        _, hi = log_series(seq, spec.lam, ts, control)
        needed = max(needed, hi)
    return int(needed * 1.25) + 16


# ----------------------------------------------------------- identifiability

@dataclass(frozen=True)
class IdentifiabilityReport:
    class_x: FamilyClass
    class_z: FamilyClass
    hypothesis: str
    variant_adequate: bool
    notes: str = ""

    def as_dict(self) -> dict:
        return {"class_x": self.class_x.value, "class_z": self.class_z.value,
                "hypothesis": self.hypothesis, "variant_adequate": self.variant_adequate,
                "notes": self.notes}


def identifiability_report(family_x: JumpFamily, family_z: JumpFamily, variant,
                           x: Optional[float] = None, z: Optional[float] = None
                           ) -> IdentifiabilityReport:
    """Which identifiability hypothesis the family pair satisfies.

    ``H1``: a family is bounded away from zero; ``H2i``: otherwise a family is
    absolutely continuous; ``H2ii``: both are discrete with an atom at zero,
    which identifies the intensity only when ties are observed (Model II).
    """
    variant = ModelVariant.parse(variant)
    cx, cz = family_x.classify(), family_z.classify()
    notes = []
    if FamilyClass.F1 in (cx, cz):
        hypothesis = "H1"
        counts = []
        if x is not None:
            counts.append(family_x.n_max(x))
        if z is not None:
            counts.append(family_z.n_max(z))
        counts = [c for c in counts if c is not None]
        if counts:
            notes.append(f"N_max={min(counts)}")
    elif FamilyClass.F2 in (cx, cz):
        hypothesis = "H2i"
    elif cx is FamilyClass.F3 and cz is FamilyClass.F3:
        hypothesis = "H2ii"
    else:
        hypothesis = "none"
    adequate = hypothesis != "none" and not (hypothesis == "H2ii" and variant is ModelVariant.I)
    if hypothesis == "H2ii" and variant is ModelVariant.I:
        notes.append("intensity not identified under Model I for two discrete families with "
                     "an atom at zero; observe ties (Model II)")
    return IdentifiabilityReport(cx, cz, hypothesis, adequate, "; ".join(notes))


# ---------------------------------------------------------- derivatives

def _steps(theta, power):
    return EPS ** power * np.maximum(np.abs(theta), 1.0)


def observation_derivatives(template: ModelSpec, theta, data, control=DEFAULT_CONTROL,
                            n_terms: Optional[int] = None, hessian: bool = True):
    """Central-difference gradients (n, d) and Hessians (n, d, d) of log densities.

    Gradient steps are ``sqrt(eps) * max(|theta_j|, 1)``, Hessian steps
    ``cbrt(eps) * max(|theta_j|, 1)``. The series length is frozen so every
    perturbed evaluation uses the same terms.
    """
    y, delta = check_observations(data, template.variant)
    theta = np.asarray(theta, dtype=float)
    if n_terms is None:
        n_terms = _n_terms_for(template.with_theta(theta), y, delta)

    def f(point):
        return observation_log_density(template.with_theta(point), y, delta, control, n_terms)[0]

    d = theta.size
    eye = np.eye(d)
    hg = _steps(theta, 0.5)
    grads = np.empty((y.size, d))
    for j in range(d):
        grads[:, j] = (f(theta + hg[j] * eye[j]) - f(theta - hg[j] * eye[j])) / (2 * hg[j])
    if not hessian:
        return grads, None
    hh = _steps(theta, 1.0 / 3.0)
    f0 = f(theta)
    plus = [f(theta + hh[j] * eye[j]) for j in range(d)]
    minus = [f(theta - hh[j] * eye[j]) for j in range(d)]
    hess = np.empty((y.size, d, d))
    for j in range(d):
        hess[:, j, j] = (plus[j] - 2 * f0 + minus[j]) / hh[j] ** 2
        for k in range(j + 1, d):
            ej, ek = hh[j] * eye[j], hh[k] * eye[k]
            value = (f(theta + ej + ek) - f(theta + ej - ek)
                     - f(theta - ej + ek) + f(theta - ej - ek)) / (4 * hh[j] * hh[k])
            hess[:, j, k] = hess[:, k, j] = value
    return grads, hess


def information_matrices(template: ModelSpec, theta, data, control=DEFAULT_CONTROL,
                         n_terms: Optional[int] = None):
    """``(A_n, B_n)``: mean Hessian and mean outer product of per-observation scores."""
    grads, hess = observation_derivatives(template, theta, data, control, n_terms)
    a_n = hess.mean(axis=0)
    a_n = 0.5 * (a_n + a_n.T)
    b_n = grads.T @ grads / grads.shape[0]
    return a_n, b_n


def sandwich_covariance(a_n, b_n, max_condition: float = 1e12) -> np.ndarray:
    """``A^{-1} B A^{-1}``, the asymptotic covariance of ``sqrt(n) (theta_hat - theta)``."""
    a_n = np.atleast_2d(np.asarray(a_n, dtype=float))
    b_n = np.atleast_2d(np.asarray(b_n, dtype=float))
    cond = np.linalg.cond(a_n)
    if not np.isfinite(cond) or cond > max_condition:
        raise SingularInformationError(f"A_n is singular or ill-conditioned (condition {cond:.3g})")
    inv = np.linalg.inv(a_n)
    cov = inv @ b_n @ inv
    return 0.5 * (cov + cov.T)


# --------------------------------------------------------------- fitting

@dataclass
class FitResult:
    theta_hat: np.ndarray
    param_names: list
    spec: ModelSpec
    loglik: float
    covariance: Optional[np.ndarray]
    std_errors: Optional[np.ndarray]
    converged: bool
    n_multistarts_used: int
    gradient_norm: float
    n_obs: int
    at_boundary: bool = False
    n_penalized: int = 0
    start_logliks: list = field(default_factory=list)
    condition_number: float = float("nan")
    a_n: Optional[np.ndarray] = None
    b_n: Optional[np.ndarray] = None
    message: str = ""

    def as_dict(self) -> dict:
        out = {"converged": self.converged, "loglik": self.loglik, "n_obs": self.n_obs,
               "n_multistarts_used": self.n_multistarts_used,
               "gradient_norm": self.gradient_norm, "at_boundary": self.at_boundary,
               "n_penalized": self.n_penalized, "condition_number": self.condition_number}
        for i, name in enumerate(self.param_names):
            out[f"theta.{name}"] = float(self.theta_hat[i])
            if self.std_errors is not None:
                out[f"se.{name}"] = float(self.std_errors[i])
        return out


def _data_warnings(template: ModelSpec, delta):
    if prob_equal(template) <= 0.0:
        warnings.warn("P[T = C] = 0 under the model template: one crossing time occurs "
                      "almost surely first, so one margin cannot be identified",
                      DegeneracyWarning, stacklevel=3)
    uncensored = np.isin(delta, (1, 2)).any()
    censored = (delta == 0).any()
    if not (uncensored and censored):
        warnings.warn("data contain only censored or only uncensored observations",
                      DegeneracyWarning, stacklevel=3)


def fit(template: ModelSpec, data, *, multistarts: int = 8, tolerance: float = 1e-8,
        max_iter: Optional[int] = None, seed: int = 0, bounds: Optional[dict] = None,
        control: SeriesControl = DEFAULT_CONTROL, init=None,
        covariance: bool = True) -> FitResult:
    """Maximize the mean log-likelihood over the parameter box.

    Nelder-Mead runs in transformed coordinates (log for positive parameters,
    logit for probabilities) from ``multistarts`` uniform draws in the
    transformed box, plus ``init`` when given; the best optimum is kept.
    Thresholds and Dirac constants in ``template`` are fixed.
    """
    if multistarts < 1:
        raise ValueError("multistarts must be >= 1")
    y, delta = check_observations(data, template.variant)
    _data_warnings(template, delta)
    report = identifiability_report(template.family_x, template.family_z, template.variant)
    if not report.variant_adequate:
        warnings.warn(f"{report.hypothesis} with Model {template.variant.value}: {report.notes}",
                      IdentifiabilityWarning, stacklevel=2)
    box = ParamBox.for_template(template, bounds)
    free_bounds = np.array(box.free_bounds)
    max_iter = max_iter or 400 * box.dim

    def objective(u):
        try:
            spec = template.with_theta(box.from_free(u))
            values, _ = observation_log_density(spec, y, delta, control)
        except (TruncationError, ValueError):
            return 1e12
        return -float(np.mean(values))

    rng = np.random.default_rng(seed)
    starts = [rng.uniform(free_bounds[:, 0], free_bounds[:, 1]) for _ in range(multistarts)]
    if init is not None:
        starts.insert(0, np.clip(box.to_free(init), free_bounds[:, 0], free_bounds[:, 1]))
    best = None
    start_logliks = []
    n_success = 0
    for u0 in starts:
        f0 = objective(u0)
        res = optimize.minimize(objective, u0, method="Nelder-Mead", bounds=free_bounds,
                                options={"xatol": tolerance, "fatol": np.inf,
                                         "maxiter": max_iter, "maxfev": 2 * max_iter})
        start_logliks.append(-float(res.fun))
        if res.success and res.fun < f0:
            n_success += 1
        if best is None or res.fun < best.fun:
            best = res
    theta_hat = box.from_free(best.x)
    spec_hat = template.with_theta(theta_hat)
    values, n_bad = observation_log_density(spec_hat, y, delta, control)
    loglik = float(np.mean(values))
    width = free_bounds[:, 1] - free_bounds[:, 0]
    at_boundary = bool(np.any(np.minimum(best.x - free_bounds[:, 0],
                                         free_bounds[:, 1] - best.x) < 1e-6 * np.maximum(width, 1)))
    converged = bool(best.success) and n_success > 0
    message = str(best.message)
    if at_boundary:
        warnings.warn(f"optimum on the boundary of the parameter box at {theta_hat}",
                      BoundaryWarning, stacklevel=2)
        message += "; optimum pinned to the parameter box"
    if not converged:
        message += "; no start improved on its initialization" if n_success == 0 else ""

    result = FitResult(theta_hat=theta_hat, param_names=list(box.names), spec=spec_hat,
                       loglik=loglik, covariance=None, std_errors=None, converged=converged,
                       n_multistarts_used=len(starts), gradient_norm=float("nan"),
                       n_obs=int(y.size), at_boundary=at_boundary, n_penalized=n_bad,
                       start_logliks=start_logliks, message=message)
    if covariance and not at_boundary:
        _attach_covariance(result, template, (y, delta), control)
    return result


def _attach_covariance(result: FitResult, template, data, control):
    try:
        grads, hess = observation_derivatives(template, result.theta_hat, data, control)
    except (TruncationError, ValueError) as exc:
        result.message += f"; derivatives unavailable ({exc})"
        return
    a_n = hess.mean(axis=0)
    a_n = 0.5 * (a_n + a_n.T)
    b_n = grads.T @ grads / grads.shape[0]
    result.a_n, result.b_n = a_n, b_n
    result.gradient_norm = float(np.linalg.norm(grads.mean(axis=0)))
    result.condition_number = float(np.linalg.cond(a_n))
    try:
        cov = sandwich_covariance(a_n, b_n)
    except SingularInformationError as exc:
        result.message += f"; {exc}"
        return
    result.covariance = cov
    result.std_errors = np.sqrt(np.maximum(np.diag(cov), 0.0) / result.n_obs)


def wald_interval(fit_result: FitResult, coordinate, level: float = 0.95):
    """``theta_j +/- z_{(1+level)/2} se_j``."""
    if not fit_result.converged:
        raise NotConvergedError("Wald intervals need a converged fit")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level!r}")
    if fit_result.std_errors is None:
        raise NotConvergedError("the fit carries no standard errors")
    if isinstance(coordinate, str):
        if coordinate not in fit_result.param_names:
            raise KeyError(f"unknown coordinate {coordinate!r}; have {fit_result.param_names}")
        coordinate = fit_result.param_names.index(coordinate)
    theta = float(fit_result.theta_hat[coordinate])
    se = float(fit_result.std_errors[coordinate])
    if se == 0.0:
        warnings.warn(f"zero standard error for {fit_result.param_names[coordinate]}: "
                      "degenerate interval", RuntimeWarning, stacklevel=2)
    half = stats.norm.ppf(0.5 * (1.0 + level)) * se
    return float(theta - half), float(theta + half)


def outcome_summary(spec: ModelSpec) -> dict:
    """Predicted P[T <= C] plus the mass of each censoring indicator."""
    probs = outcome_probabilities(spec)
    return {"p_uncensored": predicted_prob_uncensored(spec),
            "p_equal": prob_equal(spec),
            **{f"p_delta_{k}": v for k, v in probs.items()}}


