"""Parametric jump-size families and their cumulative crossing coefficients.

For a family with i.i.d. jumps ``M_1, M_2, ...`` and a threshold ``x`` the
crossing coefficient is ``c_n = P[M_1 + ... + M_n < x]`` (strict inequality,
``c_0 = 1``). Every family ships a closed form for ``log c_n`` and for
``log (c_n - c_{n+1})``, the probability that the threshold is first reached
at jump ``n + 1``.
"""
from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import ClassVar, Optional

import numpy as np
from scipy import special


class ParameterDomainError(ValueError):
    """Raised when a parameter lies outside its admissible domain."""


class FamilyClass(enum.Enum):
    F1 = "F1"  # bounded away from zero
    F2 = "F2"  # absolutely continuous, eventually monotone convolution
    F3 = "F3"  # discrete with an atom at zero


def lattice_cutoff(threshold: float) -> int:
    """Largest integer strictly below ``threshold``."""
    return math.ceil(threshold) - 1


def _check_threshold(threshold):
    if not (threshold > 0 and math.isfinite(threshold)):
        raise ParameterDomainError(f"threshold must be positive and finite, got {threshold!r}")


def _as_index(n):
    arr = np.asarray(n)
    if arr.dtype.kind not in "iu":
        if np.any(arr != np.floor(arr)):
            raise ParameterDomainError("jump counts must be integers")
        arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise ParameterDomainError("jump counts must be nonnegative")
    return arr


def _binom_logpmf(k, n, p):
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    with np.errstate(invalid="ignore"):
        out = (special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)
               + k * math.log(p) + (n - k) * math.log1p(-p))
    return np.where((k >= 0) & (k <= n), out, -np.inf)


def _poisson_logpmf(k, mu):
    k = np.asarray(k, dtype=float)
    return special.xlogy(k, mu) - mu - special.gammaln(k + 1)


def _poisson_logsf(k, mu):
    """log P[Poisson(mu) > k] for integer k >= -1."""
    k = np.asarray(k, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(k < 0, 0.0, np.log(special.gammainc(np.maximum(k, 0) + 1, mu)))


def logsumexp_rows(terms, overwrite=False):
    """Row-wise log-sum-exp of a 2-D array that may contain -inf.

    With ``overwrite`` the input array is used as scratch space.
    """
    peak = terms.max(axis=1)
    if not np.isfinite(peak).all():
        peak = np.where(np.isfinite(peak), peak, 0.0)
    scratch = np.subtract(terms, peak[:, None], out=terms if overwrite else None)
    np.exp(scratch, out=scratch)
    with np.errstate(divide="ignore"):
        return np.log(scratch.sum(axis=1)) + peak


def _log1mexp(a):
    """log(1 - exp(a)) for a <= 0, accurate on both ends."""
    a = np.asarray(a, dtype=float)
    out = np.full(a.shape, -np.inf)
    small = a > -0.6931471805599453
    with np.errstate(divide="ignore"):
        out[small] = np.log(-np.expm1(a[small]))
        out[~small] = np.log1p(-np.exp(a[~small]))
    return out


@dataclass(frozen=True)
class JumpFamily:
    """Base class of the supported jump-size laws.

    Subclasses define ``kind``, ``param_names``, ``transforms`` and
    ``default_bounds`` and implement the log-coefficient closed forms.
    """

    kind: ClassVar[str] = ""
    param_names: ClassVar[tuple] = ()
    transforms: ClassVar[tuple] = ()
    default_bounds: ClassVar[tuple] = ()
    family_class: ClassVar[FamilyClass]

    @property
    def params(self) -> tuple:
        return tuple(getattr(self, name) for name in self.param_names)

    @property
    def n_free(self) -> int:
        return len(self.param_names)

    def with_params(self, values) -> "JumpFamily":
        values = tuple(float(v) for v in values)
        if len(values) != self.n_free:
            raise ParameterDomainError(
                f"{self.kind} takes {self.n_free} parameter(s), got {len(values)}")
        return replace(self, **dict(zip(self.param_names, values)))

    def classify(self) -> FamilyClass:
        return self.family_class

    def prob_zero(self) -> float:
        """P[jump = 0]."""
        return 0.0

    def n_max(self, threshold: float) -> Optional[int]:
        """Smallest ``n`` with ``c_n = 0``, or None when every ``c_n > 0``."""
        _check_threshold(threshold)
        return None

    def log_coefficients(self, n, threshold: float) -> np.ndarray:
        raise NotImplementedError

    def log_drops(self, n, threshold: float) -> np.ndarray:
        """``log(c_n - c_{n+1})`` for each ``n``."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def __str__(self) -> str:
        return f"{self.kind}:" + ",".join(repr(float(p)) for p in self.params)


@dataclass(frozen=True)
class Dirac(JumpFamily):
    c: float = 1.0

    kind: ClassVar[str] = "dirac"
    family_class: ClassVar[FamilyClass] = FamilyClass.F1

    # the constant is treated as known: no free parameters
    @property
    def params(self) -> tuple:
        return ()

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ParameterDomainError(f"Dirac constant must be positive, got {self.c!r}")

    def n_max(self, threshold):
        _check_threshold(threshold)
        n = max(math.ceil(threshold / self.c) - 1, 0)
        while n * self.c < threshold:
            n += 1
        return n

    def log_coefficients(self, n, threshold):
        _check_threshold(threshold)
        n = _as_index(n)
        return np.where(n * self.c < threshold, 0.0, -np.inf)

    def log_drops(self, n, threshold):
        n = _as_index(n)
        return np.where(n == self.n_max(threshold) - 1, 0.0, -np.inf)

    def sample(self, rng, size=None):
        if size is None:
            return float(self.c)
        return np.full(size, float(self.c))

    def __str__(self):
        return f"dirac:{self.c!r}"


@dataclass(frozen=True)
class Bernoulli(JumpFamily):
    p: float = 0.5

    kind: ClassVar[str] = "bernoulli"
    param_names: ClassVar[tuple] = ("p",)
    transforms: ClassVar[tuple] = ("logit",)
    default_bounds: ClassVar[tuple] = ((0.005, 0.995),)
    family_class: ClassVar[FamilyClass] = FamilyClass.F3

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ParameterDomainError(f"Bernoulli p must lie in (0, 1), got {self.p!r}")

    def prob_zero(self):
        return 1.0 - self.p

    def log_coefficients(self, n, threshold):
        _check_threshold(threshold)
        n = _as_index(n)
        k = lattice_cutoff(threshold)
        j = np.arange(k + 1)
        # binomial lower tail as a short log-sum over the k+1 admissible counts
        terms = _binom_logpmf(j[None, :], n.reshape(-1, 1), self.p)
        out = logsumexp_rows(terms).reshape(n.shape)
        return np.where(n <= k, 0.0, np.minimum(out, 0.0))

    def log_drops(self, n, threshold):
        _check_threshold(threshold)
        n = _as_index(n)
        k = lattice_cutoff(threshold)
        return math.log(self.p) + _binom_logpmf(k, n, self.p)

    def sample(self, rng, size=None):
        draw = rng.random(size) < self.p
        return float(draw) if size is None else draw.astype(float)


@dataclass(frozen=True)
class Exponential(JumpFamily):
    rate: float = 1.0

    kind: ClassVar[str] = "exponential"
    param_names: ClassVar[tuple] = ("rate",)
    transforms: ClassVar[tuple] = ("log",)
    default_bounds: ClassVar[tuple] = ((1e-3, 1e3),)
    family_class: ClassVar[FamilyClass] = FamilyClass.F2

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ParameterDomainError(f"Exponential rate must be positive, got {self.rate!r}")

    def log_coefficients(self, n, threshold):
        # S_n ~ Gamma(n, rate): c_n = P(n, rate * x), equivalently P[Poisson(rate * x) >= n]
        _check_threshold(threshold)
        n = _as_index(n)
        a = self.rate * threshold
        nf = np.maximum(n, 1).astype(float)
        direct = special.gammainc(nf, a)
        with np.errstate(divide="ignore"):
            out = np.log(direct)
        deep = direct < 1e-250
        if np.any(deep):
            # upper Poisson tail written as pmf(n) * 1F1(1; n + 1; a) when it underflows
            nd = nf[deep]
            out[deep] = (nd * math.log(a) - a - special.gammaln(nd + 1)
                         + np.log(special.hyp1f1(1.0, nd + 1, a)))
        return np.where(n == 0, 0.0, out)

    def log_drops(self, n, threshold):
        _check_threshold(threshold)
        n = _as_index(n)
        return _poisson_logpmf(n, self.rate * threshold)

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size)


@dataclass(frozen=True)
class Poisson(JumpFamily):
    mean: float = 1.0

    kind: ClassVar[str] = "poisson"
    param_names: ClassVar[tuple] = ("mean",)
    transforms: ClassVar[tuple] = ("log",)
    default_bounds: ClassVar[tuple] = ((1e-3, 1e2),)
    family_class: ClassVar[FamilyClass] = FamilyClass.F3

    def __post_init__(self):
        if not (self.mean > 0 and math.isfinite(self.mean)):
            raise ParameterDomainError(f"Poisson mean must be positive, got {self.mean!r}")

    def prob_zero(self):
        return math.exp(-self.mean)

    def log_coefficients(self, n, threshold):
        # S_n ~ Poisson(n * mean)
        _check_threshold(threshold)
        n = _as_index(n)
        k = lattice_cutoff(threshold)
        j = np.arange(k + 1)
        terms = _poisson_logpmf(j[None, :], self.mean * n.reshape(-1, 1))
        return np.minimum(logsumexp_rows(terms), 0.0).reshape(n.shape)

    def log_drops(self, n, threshold):
        # sum_j P[S_n = j] P[M > k - j] over j <= k
        _check_threshold(threshold)
        n = _as_index(n)
        k = lattice_cutoff(threshold)
        j = np.arange(k + 1)
        terms = (_poisson_logpmf(j[None, :], self.mean * n.reshape(-1, 1))
                 + _poisson_logsf(k - j, self.mean)[None, :])
        return logsumexp_rows(terms).reshape(n.shape)

    def sample(self, rng, size=None):
        draw = rng.poisson(self.mean, size)
        return float(draw) if size is None else draw.astype(float)


FAMILIES = {cls.kind: cls for cls in (Dirac, Bernoulli, Exponential, Poisson)}


def parse_family(literal: str) -> JumpFamily:
    """Parse ``dirac:<c>``, ``bernoulli:<p>``, ``exponential:<rate>`` or ``poisson:<mean>``."""
    kind, sep, value = literal.strip().partition(":")
    kind = kind.strip().lower()
    if not sep or kind not in FAMILIES:
        raise ParameterDomainError(
            f"unknown jump family literal {literal!r}; expected one of "
            + ", ".join(f"{k}:<value>" for k in FAMILIES))
    try:
        param = float(value)
    except ValueError:
        raise ParameterDomainError(f"bad parameter in jump family literal {literal!r}") from None
    return FAMILIES[kind](param)


def classify(family: JumpFamily) -> FamilyClass:
    return family.classify()


def n_max(family: JumpFamily, threshold: float) -> Optional[int]:
    return family.n_max(threshold)


def sample(family: JumpFamily, rng: np.random.Generator, size=None):
    return family.sample(rng, size)


def cumulative_coefficient(family: JumpFamily, n: int, threshold: float) -> float:
    """``P[M_1 + ... + M_n < threshold]`` for the jump law ``family``."""
    _check_threshold(threshold)
    if isinstance(n, bool) or int(n) != n or n < 0:
        raise ParameterDomainError(f"n must be a nonnegative integer, got {n!r}")
    return float(np.exp(family.log_coefficients(np.array([int(n)]), threshold)[0]))


class CoefficientTable:
    """Memoized ``log c_n`` and ``log(c_n - c_{n+1})`` for one family/threshold pair.

    The table grows by doubling; a grown array is swapped in under a lock, so
    concurrent readers always see a complete prefix.
    """

    _initial = 64

    def __init__(self, family: JumpFamily, threshold: float):
        _check_threshold(threshold)
        self.family = family
        self.threshold = float(threshold)
        self._lock = threading.Lock()
        self._log_c = np.empty(0)
        self._log_d = np.empty(0)

    def __len__(self):
        return len(self._log_c)

    def _ensure(self, size):
        if len(self._log_c) >= size:
            return
        with self._lock:
            current = len(self._log_c)
            if current >= size:
                return
            new_size = max(self._initial, current)
            while new_size < size:
                new_size *= 2
            idx = np.arange(new_size)
            log_c = self.family.log_coefficients(idx, self.threshold)
            log_d = self.family.log_drops(idx, self.threshold)
            # once the coefficients hit zero they stay there
            log_c = np.minimum.accumulate(log_c)
            log_c.setflags(write=False)
            log_d.setflags(write=False)
            self._log_d = log_d
            self._log_c = log_c

    def log_values(self, size: int) -> np.ndarray:
        """``log c_0, ..., log c_{size-1}``."""
        self._ensure(size)
        return self._log_c[:size]

    def log_drops(self, size: int) -> np.ndarray:
        """``log(c_n - c_{n+1})`` for ``n < size``."""
        self._ensure(size)
        return self._log_d[:size]

    def values(self, size: int) -> np.ndarray:
        return np.exp(self.log_values(size))

    def __getitem__(self, n: int) -> float:
        self._ensure(n + 1)
        return float(np.exp(self._log_c[n]))


@lru_cache(maxsize=1024)
def coefficient_table(family: JumpFamily, threshold: float) -> CoefficientTable:
    return CoefficientTable(family, threshold)
