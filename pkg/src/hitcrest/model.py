"""Closed-form model functions of the shared-clock hitting-time model.

Every quantity is a Poisson mixture ``sum_n b_n e^{-lt} (lt)^n / n!`` whose
coefficients ``b_n`` are products of crossing coefficients of the two jump
laws. Series are summed in log space and truncated adaptively: the tail past
index ``N`` is bounded by ``sup_{m >= N} |b_m| * P[Poisson(lt) >= N]`` and the
sum stops once that bound drops below ``epsilon * (result + e^{-lt})``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import special

from .jumps import CoefficientTable, JumpFamily, _log1mexp, coefficient_table, logsumexp_rows


class TruncationError(ArithmeticError):
    """The series tail was still non-negligible at the hard term cap."""


class EvaluationError(ArithmeticError):
    """A model function could not be evaluated at the requested point."""


class ModelVariant(enum.Enum):
    I = "I"  # noqa: E741  -- tie folded into delta = 1
    II = "II"  # tie reported as delta = 2

    @classmethod
    def parse(cls, value) -> "ModelVariant":
        if isinstance(value, cls):
            return value
        text = str(value).strip().upper()
        aliases = {"I": cls.I, "1": cls.I, "MODELI": cls.I, "MODEL_I": cls.I,
                   "II": cls.II, "2": cls.II, "MODELII": cls.II, "MODEL_II": cls.II}
        if text not in aliases:
            raise ValueError(f"unknown model variant {value!r}; expected I or II")
        return aliases[text]

    @property
    def deltas(self) -> tuple:
        return (0, 1) if self is ModelVariant.I else (0, 1, 2)


@dataclass(frozen=True)
class SeriesControl:
    epsilon: float = 1e-10
    hard_cap: int = 10_000

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon!r}")
        if self.hard_cap < 50:
            raise ValueError(f"hard_cap must be at least 50, got {self.hard_cap!r}")


DEFAULT_CONTROL = SeriesControl()


@dataclass(frozen=True)
class Observation:
    y: float
    delta: int

    def __post_init__(self):
        if not (self.y >= 0 and math.isfinite(self.y)):
            raise ValueError(f"observation time must be finite and >= 0, got {self.y!r}")
        if self.delta not in (0, 1, 2):
            raise ValueError(f"censoring indicator must be 0, 1 or 2, got {self.delta!r}")


@dataclass(frozen=True)
class ModelSpec:
    """Intensity of the shared jump clock, the two jump laws and their thresholds."""

    lam: float
    family_x: JumpFamily
    x: float
    family_z: JumpFamily
    z: float
    variant: ModelVariant = ModelVariant.I

    def __post_init__(self):
        for name in ("lam", "x", "z"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        object.__setattr__(self, "variant", ModelVariant.parse(self.variant))

    @property
    def table_x(self) -> CoefficientTable:
        return coefficient_table(self.family_x, float(self.x))

    @property
    def table_z(self) -> CoefficientTable:
        return coefficient_table(self.family_z, float(self.z))

    @property
    def theta(self) -> np.ndarray:
        """Free parameters: intensity, then jump-x parameters, then jump-z parameters."""
        return np.array((self.lam, *self.family_x.params, *self.family_z.params), dtype=float)

    @property
    def param_names(self) -> list:
        return (["lambda"] + [f"x.{p}" for p in self.family_x.param_names]
                + [f"z.{p}" for p in self.family_z.param_names])

    def with_theta(self, theta) -> "ModelSpec":
        theta = np.asarray(theta, dtype=float)
        d1 = self.family_x.n_free
        d2 = self.family_z.n_free
        if theta.shape != (1 + d1 + d2,):
            raise ValueError(f"expected {1 + d1 + d2} parameters, got shape {theta.shape}")
        return replace(self, lam=float(theta[0]),
                       family_x=self.family_x.with_params(theta[1:1 + d1]),
                       family_z=self.family_z.with_params(theta[1 + d1:]))

    def with_variant(self, variant) -> "ModelSpec":
        return replace(self, variant=ModelVariant.parse(variant))

    @property
    def is_degenerate(self) -> bool:
        return prob_equal(self) <= 0.0


# ---------------------------------------------------------------- series kernel

_LGAMMA = special.gammaln(np.arange(1, 20_002, dtype=float))  # log n! for n <= 20000
_LOG_TINY = math.log(1e-300)


def _log_factorial(lo, hi):
    if hi <= len(_LGAMMA):
        return _LGAMMA[lo:hi]
    return special.gammaln(np.arange(lo + 1, hi + 1, dtype=float))


@dataclass
class _Coefficients:
    """A coefficient sequence given through its log and a log-envelope.

    ``log_b(size)`` returns ``log b_0, ..., log b_{size-1}``; ``log_env(N)``
    bounds ``log sup_{m >= N} |b_m|``.
    """

    log_b: Callable[[int], np.ndarray]
    log_env: Callable[[int], float] = field(default=lambda N: 0.0)


def _log_poisson_matrix(lt, lo, hi):
    return _log_power_matrix(lt, lo, hi) - lt[:, None] - _log_factorial(lo, hi)[None, :]


def _log_power_matrix(lt, lo, hi):
    """``n log(lt)`` for n in [lo, hi), with 0 log 0 = 0."""
    n = np.arange(lo, hi, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = n[None, :] * np.log(lt)[:, None]
    if lo == 0:
        out[:, 0] = 0.0
    return out


def _log_upper_tail(lt, hi):
    """log P[Poisson(lt) >= hi]."""
    with np.errstate(divide="ignore"):
        if hi == 0:
            return np.zeros_like(lt)
        return np.log(special.gammainc(float(hi), lt))


def _log_lower_tail(lt, lo):
    """log P[Poisson(lt) < lo]."""
    with np.errstate(divide="ignore"):
        if lo == 0:
            return np.full_like(lt, -np.inf)
        return np.log(special.gammaincc(float(lo), lt))


_CHUNK = 16_384


def _log_sum_window(log_b, lt, lo, hi):
    weights = (log_b - _log_factorial(lo, hi))[None, :]
    out = np.empty(len(lt))
    for start in range(0, len(lt), _CHUNK):
        part = lt[start:start + _CHUNK]
        terms = _log_power_matrix(part, lo, hi)
        terms += weights
        out[start:start + _CHUNK] = logsumexp_rows(terms, overwrite=True) - part
    return out


def initial_terms(lt_max: float) -> int:
    return int(lt_max + 8.0 * math.sqrt(lt_max) + 32)


def _initial_low(lt_min: float) -> int:
    return max(0, int(lt_min - 8.0 * math.sqrt(lt_min) - 32))


def log_series(coeffs: _Coefficients, lam: float, t, control: SeriesControl = DEFAULT_CONTROL,
               n_terms: Optional[int] = None):
    """Return ``(log sum_n b_n Pois(n; lam t), hi)`` for an array of ``t``.

    ``hi`` is one past the last index summed.

    The summation window starts around ``lam * t`` and widens in both
    directions until the bounded tails fall below tolerance (or below 1e-300
    in absolute terms). With ``n_terms`` fixed the window is ``[0, n_terms)``
    and not adapted, which keeps the value a smooth function of the
    parameters (needed by finite differences).
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(~np.isfinite(t)):
        raise ValueError("series argument t must be finite and >= 0")
    flat = t.ravel()
    lt = lam * flat
    if n_terms is not None:
        return _log_sum_window(coeffs.log_b(n_terms), lt, 0, n_terms).reshape(t.shape), n_terms
    if flat.size == 0:
        return np.empty(t.shape), 0
    # points far apart in lam*t need disjoint windows: cluster them so no window is
    # much wider than the widest single-point window, and sum each cluster separately
    top = float(lt.max())
    budget = min(control.hard_cap // 2, max(256, 2 * (initial_terms(top) - _initial_low(top))))
    if initial_terms(float(lt.max())) - _initial_low(float(lt.min())) <= budget:
        values, hi = _log_series_window(coeffs, lt, control)
        return values.reshape(t.shape), hi
    order = np.argsort(lt, kind="stable")
    ends = np.floor(lt[order] + 8.0 * np.sqrt(lt[order]) + 32)
    values = np.empty(flat.size)
    hi = 0
    start = 0
    while start < order.size:
        low = _initial_low(float(lt[order[start]]))
        stop = max(int(np.searchsorted(ends, low + budget, side="right")), start + 1)
        idx = order[start:stop]
        values[idx], group_hi = _log_series_window(coeffs, lt[idx], control)
        hi = max(hi, group_hi)
        start = stop
    return values.reshape(t.shape), hi


def _log_series_window(coeffs: _Coefficients, lt, control: SeriesControl):
    lo = _initial_low(float(lt.min()))
    hi = min(initial_terms(float(lt.max())), lo + control.hard_cap)
    log_eps = math.log(control.epsilon)
    while True:
        values = _log_sum_window(coeffs.log_b(hi)[lo:], lt, lo, hi)
        target = np.maximum(log_eps + np.logaddexp(values, -lt), _LOG_TINY)
        log_env = coeffs.log_env(hi)
        upper = log_env + _log_upper_tail(lt, hi) if log_env > -np.inf else np.full_like(lt, -np.inf)
        lower = _log_lower_tail(lt, lo)
        upper_ok = bool(np.all(upper <= target))
        lower_ok = bool(np.all(lower <= target))
        if upper_ok and lower_ok:
            return values, hi
        width = hi - lo
        if width >= control.hard_cap:
            worst = float(np.max(np.maximum(upper, lower) - target))
            raise TruncationError(
                f"series tail still {math.exp(min(worst, 700)):.3g} x tolerance after "
                f"{width} terms (hard cap {control.hard_cap}); lam*t in "
                f"[{lt.min():.4g}, {lt.max():.4g}]")
        grow = max(min(width, control.hard_cap - width), 1)
        if not lower_ok:
            step = min(lo, grow if upper_ok else max(grow // 2, 1))
            lo -= step
            grow -= step
        if not upper_ok:
            hi += max(grow, 1)


def poisson_mixture(coeffs, lam: float, t, control: SeriesControl = DEFAULT_CONTROL):
    """Evaluate ``e^{-lam t} sum_n b_n (lam t)^n / n!``.

    ``coeffs`` is either a finite sequence (treated as zero past its end) or a
    vectorized callable ``b(n)`` for an infinite sequence bounded by 1 in
    absolute value. Signed coefficients are supported.
    """
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam!r}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be >= 0")
    if callable(coeffs):
        def values(size):
            return np.asarray(coeffs(np.arange(size)), dtype=float)

        def log_env(size):
            return 0.0
    else:
        finite = np.asarray(coeffs, dtype=float)

        def values(size):
            out = np.zeros(size)
            m = min(size, len(finite))
            out[:m] = finite[:m]
            return out

        def log_env(size):
            return 0.0 if size < len(finite) and np.any(finite[size:] != 0) else -np.inf

    def part(sign):
        def log_b(size):
            b = sign * values(size)
            with np.errstate(divide="ignore"):
                return np.where(b > 0, np.log(np.where(b > 0, b, 1.0)), -np.inf)
        return _Coefficients(log_b, log_env)

    pos, _ = log_series(part(1.0), lam, t_arr, control)
    probe = values(min(control.hard_cap, initial_terms(lam * float(t_arr.max(initial=0.0)))))
    if np.any(probe < 0):
        neg, _ = log_series(part(-1.0), lam, t_arr, control)
        result = np.exp(pos) - np.exp(neg)
    else:
        result = np.exp(pos)
    return float(result) if np.ndim(t) == 0 else result


# ------------------------------------------------------------- model sequences

def _env(*tables):
    def log_env(size):
        return min(float(tab.log_values(size + 1)[size]) for tab in tables)
    return log_env


def _sequence(spec: ModelSpec, name: str) -> _Coefficients:
    tx, tz = spec.table_x, spec.table_z
    env = _env(tx, tz)
    if name == "cross_x_first":  # [c_nX - c_{n+1}X] c_nZ
        return _Coefficients(lambda s: tx.log_drops(s) + tz.log_values(s), env)
    if name == "cross_x_strict":  # [c_nX - c_{n+1}X] c_{n+1}Z
        return _Coefficients(lambda s: tx.log_drops(s) + tz.log_values(s + 1)[1:], env)
    if name == "cross_z_strict":  # [c_nZ - c_{n+1}Z] c_{n+1}X
        return _Coefficients(lambda s: tz.log_drops(s) + tx.log_values(s + 1)[1:], env)
    if name == "cross_both":  # [c_nX - c_{n+1}X][c_nZ - c_{n+1}Z]
        return _Coefficients(lambda s: tx.log_drops(s) + tz.log_drops(s), env)
    if name == "survival":  # c_nX c_nZ
        return _Coefficients(lambda s: tx.log_values(s) + tz.log_values(s), env)
    if name == "survival_shifted":  # c_{n+1}X c_{n+1}Z
        return _Coefficients(
            lambda s: tx.log_values(s + 1)[1:] + tz.log_values(s + 1)[1:], env)
    if name == "survival_drop":  # c_nX c_nZ (1 - ratio_nX ratio_nZ), ratio_n = c_{n+1} / c_n
        def log_b(size):
            lx, lz = tx.log_values(size), tz.log_values(size)
            with np.errstate(invalid="ignore", divide="ignore"):
                rx = np.log1p(-np.exp(tx.log_drops(size) - lx))
                rz = np.log1p(-np.exp(tz.log_drops(size) - lz))
                out = lx + lz + _log1mexp(np.nan_to_num(rx + rz, nan=-np.inf))
            return np.where(np.isfinite(lx + lz), out, -np.inf)
        return _Coefficients(log_b, env)
    if name == "cdf_T":  # 1 - c_nX
        return _Coefficients(lambda s: _log1mexp(tx.log_values(s)))
    if name == "cdf_C":
        return _Coefficients(lambda s: _log1mexp(tz.log_values(s)))
    raise KeyError(name)


def outcome_sequence_name(variant: ModelVariant, delta: int) -> str:
    if delta == 0:
        return "cross_z_strict"
    if variant is ModelVariant.I:
        if delta == 1:
            return "cross_x_first"
    elif delta == 1:
        return "cross_x_strict"
    elif delta == 2:
        return "cross_both"
    raise ValueError(f"delta={delta!r} is not valid under Model {variant.value}")


def _finish(values, t):
    return float(values) if np.ndim(t) == 0 else values


def log_outcome_density(spec: ModelSpec, t, delta, control: SeriesControl = DEFAULT_CONTROL,
                        n_terms: Optional[int] = None):
    """Log density of ``(Y, Delta)`` at times ``t`` with indicators ``delta`` (broadcast)."""
    t, delta = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(delta))
    out = np.empty(t.shape)
    for d in np.unique(delta):
        mask = delta == d
        seq = _sequence(spec, outcome_sequence_name(spec.variant, int(d)))
        out[mask], _ = log_series(seq, spec.lam, t[mask], control, n_terms)
    return out + math.log(spec.lam)


def outcome_density(spec: ModelSpec, t, delta: int, control: SeriesControl = DEFAULT_CONTROL):
    """Density of ``(Y, Delta)`` w.r.t. Lebesgue x counting measure."""
    name = outcome_sequence_name(spec.variant, int(delta))
    values, _ = log_series(_sequence(spec, name), spec.lam, t, control)
    return _finish(spec.lam * np.exp(values), t)


def _sum_until_small(spec: ModelSpec, terms: Callable[[int], np.ndarray], epsilon=1e-15,
                     hard_cap=DEFAULT_CONTROL.hard_cap) -> float:
    """Sum a coefficient series whose tail past N is bounded by min(c_NX, c_NZ)."""
    size = 64
    env = _env(spec.table_x, spec.table_z)
    while True:
        if math.exp(env(size)) < epsilon or size >= hard_cap:
            return float(np.sum(np.exp(terms(size))))
        size *= 2


def prob_equal(spec: ModelSpec) -> float:
    """P[T = C]; depends on the jump laws only."""
    tx, tz = spec.table_x, spec.table_z
    return _sum_until_small(spec, lambda s: tx.log_drops(s) + tz.log_drops(s))


def outcome_probabilities(spec: ModelSpec) -> dict:
    """Total mass of each censoring indicator under ``spec.variant``."""
    tx, tz = spec.table_x, spec.table_z
    p_equal = prob_equal(spec)
    p_x_first = _sum_until_small(spec, lambda s: tx.log_drops(s) + tz.log_values(s + 1)[1:])
    p_z_first = _sum_until_small(spec, lambda s: tz.log_drops(s) + tx.log_values(s + 1)[1:])
    if spec.variant is ModelVariant.I:
        return {0: p_z_first, 1: p_x_first + p_equal}
    return {0: p_z_first, 1: p_x_first, 2: p_equal}


def predicted_prob_uncensored(spec: ModelSpec) -> float:
    """P[T <= C] = sum_n [c_nX - c_{n+1}X] c_nZ."""
    tx, tz = spec.table_x, spec.table_z
    return _sum_until_small(spec, lambda s: tx.log_drops(s) + tz.log_values(s))


def log_survival_y(spec, t, control=DEFAULT_CONTROL):
    values, _ = log_series(_sequence(spec, "survival"), spec.lam, t, control)
    return values


def survival_y(spec: ModelSpec, t, control: SeriesControl = DEFAULT_CONTROL):
    """S_Y(t) = P[min(T, C) > t]."""
    return _finish(np.exp(log_survival_y(spec, t, control)), t)


def density_y(spec: ModelSpec, t, control: SeriesControl = DEFAULT_CONTROL):
    """Density of Y, the sum of the outcome densities over the indicators."""
    t_arr = np.asarray(t, dtype=float)
    total = sum(np.exp(log_outcome_density(spec, t_arr, d, control))
                for d in spec.variant.deltas)
    return _finish(total, t)


def hazard(spec: ModelSpec, t, control: SeriesControl = DEFAULT_CONTROL, route: str = "ratio"):
    """Hazard of Y.

    ``route="ratio"`` uses ``lam * (1 - shifted/unshifted)`` with the numerator
    ``unshifted - shifted`` formed term by term, so no cancellation occurs when
    the ratio is close to 1; ``route="quotient"`` divides the outcome densities
    by S_Y.
    """
    t_arr = np.asarray(t, dtype=float)
    log_s = log_survival_y(spec, t_arr, control)
    bad = ~np.isfinite(log_s)
    if np.any(bad):
        raise EvaluationError(f"S_Y underflows at t={float(t_arr[bad].ravel()[0])!r}")
    if route == "ratio":
        log_gap, _ = log_series(_sequence(spec, "survival_drop"), spec.lam, t_arr, control)
        h = spec.lam * np.exp(np.minimum(log_gap - log_s, 0.0))
    elif route == "quotient":
        log_f = special.logsumexp(
            np.stack([log_outcome_density(spec, t_arr, d, control) for d in spec.variant.deltas]),
            axis=0)
        h = np.exp(log_f - log_s)
    else:
        raise ValueError(f"unknown hazard route {route!r}")
    return _finish(h, t)


def marginal_cdf(spec: ModelSpec, which: str, t, control: SeriesControl = DEFAULT_CONTROL):
    """P[T <= t] (``which="T"``) or P[C <= t] (``which="C"``)."""
    which = str(which).upper()
    if which not in ("T", "C"):
        raise ValueError(f"which must be 'T' or 'C', got {which!r}")
    values, _ = log_series(_sequence(spec, f"cdf_{which}"), spec.lam, t, control)
    return _finish(np.minimum(np.exp(values), 1.0), t)


def diagonal_density(spec: ModelSpec, u, control: SeriesControl = DEFAULT_CONTROL):
    """Density of the singular part of (T, C) along the diagonal."""
    values, _ = log_series(_sequence(spec, "cross_both"), spec.lam, u, control)
    return _finish(spec.lam * np.exp(values), u)


def _log_joint_below(lam, first: CoefficientTable, second: CoefficientTable, u, v, control):
    # first process crosses at jump i+1 (time u), second at jump i+k+2 (time v > u)
    lu, lw = lam * u, lam * (v - u)
    size = min(initial_terms(lam * v), control.hard_cap)
    log_eps = math.log(control.epsilon)
    while True:
        i = np.arange(size)
        d_first = first.log_drops(size)
        d_second = second.log_drops(2 * size + 1)
        idx = i[:, None] + i[None, :] + 1
        log_pu = _log_poisson_matrix(np.array([lu]), 0, size)[0]
        log_pw = _log_poisson_matrix(np.array([lw]), 0, size)[0]
        terms = d_first[:, None] + d_second[idx] + log_pu[:, None] + log_pw[None, :]
        terms = np.where(idx <= size, terms, -np.inf)
        value = special.logsumexp(terms)
        bound = float(second.log_values(size + 1)[size]) + float(_log_upper_tail(np.array([lam * v]), size)[0])
        if bound <= log_eps + np.logaddexp(value, -lam * v) or bound == -np.inf:
            return value + 2 * math.log(lam)
        if size >= control.hard_cap:
            raise TruncationError(f"joint density series did not converge at u={u!r}, v={v!r}")
        size = min(2 * size, control.hard_cap)


def joint_density_ac(spec: ModelSpec, u: float, v: float,
                     control: SeriesControl = DEFAULT_CONTROL) -> float:
    """Density of the absolutely continuous part of (T, C) at ``u != v``."""
    u, v = float(u), float(v)
    if u < 0 or v < 0:
        raise ValueError("joint density arguments must be >= 0")
    if u == v:
        raise ValueError("the diagonal u == v carries the singular part; use diagonal_density")
    if u < v:
        log_val = _log_joint_below(spec.lam, spec.table_x, spec.table_z, u, v, control)
    else:
        log_val = _log_joint_below(spec.lam, spec.table_z, spec.table_x, v, u, control)
    return float(math.exp(log_val))


def quantile_y(spec: ModelSpec, level: float, control: SeriesControl = DEFAULT_CONTROL) -> float:
    """Smallest t with P[Y <= t] >= level."""
    from scipy.optimize import brentq

    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    target = math.log1p(-level)
    hi = 1.0 / spec.lam
    while float(log_survival_y(spec, np.array([hi]), control)[0]) > target:
        hi *= 2.0
    return brentq(lambda s: float(log_survival_y(spec, np.array([s]), control)[0]) - target,
                  0.0, hi, xtol=1e-12 * hi)


Coefficients = Union[Sequence[float], Callable[[np.ndarray], np.ndarray]]
