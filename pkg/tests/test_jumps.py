import itertools
import math

import numpy as np
import pytest
from scipy import special, stats

from hitcrest import (
    Bernoulli,
    Dirac,
    Exponential,
    FamilyClass,
    ParameterDomainError,
    Poisson,
    classify,
    coefficient_table,
    cumulative_coefficient,
    n_max,
    parse_family,
)
from hitcrest.jumps import lattice_cutoff

FAMILY_GRID = [
    (Dirac(1.0), 17.0),
    (Dirac(0.5), 1.5),
    (Bernoulli(0.36), 7.0),
    (Bernoulli(0.9), 3.5),
    (Exponential(0.71), 14.0),
    (Exponential(2.04), 7.0),
    (Poisson(1.23), 19.0),
    (Poisson(0.2), 2.0),
]


def test_dirac_strict_inequality():
    assert cumulative_coefficient(Dirac(1.0), 16, 17) == 1.0
    assert cumulative_coefficient(Dirac(1.0), 17, 17) == 0.0


@pytest.mark.parametrize("family,threshold", FAMILY_GRID)
def test_empty_sum_is_below_threshold(family, threshold):
    assert cumulative_coefficient(family, 0, threshold) == 1.0


def test_bernoulli_matches_enumeration():
    p, n, x = 0.36, 10, 7
    total = 0.0
    for outcome in itertools.product((0, 1), repeat=n):
        k = sum(outcome)
        if k < x:
            total += p**k * (1 - p) ** (n - k)
    expected = sum(math.comb(n, k) * p**k * (1 - p) ** (n - k) for k in range(7))
    assert total == pytest.approx(expected, abs=1e-14)
    assert cumulative_coefficient(Bernoulli(p), n, x) == pytest.approx(total, abs=1e-13)


def test_exponential_matches_monte_carlo():
    rng = np.random.default_rng(1)
    draws = rng.gamma(3.0, 1.0, size=10**7)
    frac = np.mean(draws < 2.04 * 7)
    se = math.sqrt(frac * (1 - frac) / draws.size)
    value = cumulative_coefficient(Exponential(2.04), 3, 7.0)
    assert abs(value - frac) < 4 * se
    assert value == pytest.approx(special.gammainc(3, 14.28), rel=1e-13)


@pytest.mark.parametrize("family,threshold", FAMILY_GRID)
@pytest.mark.parametrize("n", [1, 2, 5, 10])
def test_closed_form_matches_monte_carlo(family, threshold, n):
    rng = np.random.default_rng(100 + n)
    sums = family.sample(rng, (10**6, n)).sum(axis=1)
    frac = np.mean(sums < threshold)
    value = cumulative_coefficient(family, n, threshold)
    se = math.sqrt(value * (1 - value) / sums.size)
    assert abs(value - frac) <= 4 * se


@pytest.mark.parametrize("family,threshold", FAMILY_GRID)
def test_coefficients_monotone_and_absorbing(family, threshold):
    c = coefficient_table(family, threshold).values(201)
    assert c[0] == 1.0
    assert np.all((c >= 0) & (c <= 1))
    assert np.all(np.diff(c) <= 0)
    zero = np.flatnonzero(c == 0)
    if zero.size:
        assert np.all(c[zero[0]:] == 0)


@pytest.mark.parametrize("family,threshold", FAMILY_GRID)
def test_drops_are_consecutive_differences(family, threshold):
    table = coefficient_table(family, threshold)
    c = table.values(80)
    drops = np.exp(table.log_drops(79))
    np.testing.assert_allclose(drops, c[:-1] - c[1:], atol=1e-14)


def test_lattice_cutoff():
    assert lattice_cutoff(7) == 6
    assert lattice_cutoff(7.0) == 6
    assert lattice_cutoff(3.5) == 3
    # a Dirac(0.5) path reaches 1.5 exactly at three jumps
    assert cumulative_coefficient(Dirac(0.5), 2, 1.5) == 1.0
    assert cumulative_coefficient(Dirac(0.5), 3, 1.5) == 0.0


def test_poisson_closed_form():
    mu, n, x = 1.23, 12, 19
    assert cumulative_coefficient(Poisson(mu), n, x) == pytest.approx(
        stats.poisson.cdf(18, n * mu), rel=1e-12)


def test_classification():
    assert classify(Dirac(1)) is FamilyClass.F1
    assert classify(Exponential(0.71)) is FamilyClass.F2
    assert classify(Bernoulli(0.36)) is FamilyClass.F3
    assert classify(Poisson(1.23)) is FamilyClass.F3


def test_n_max():
    assert n_max(Dirac(1), 17) == 17
    assert n_max(Dirac(2), 7) == 4
    assert n_max(Exponential(3.0), 5) is None
    assert n_max(Bernoulli(0.5), 5) is None


def test_sample_moments():
    rng = np.random.default_rng(7)
    assert np.all(Dirac(1.0).sample(rng, 100) == 1.0)
    p = 0.36
    draws = Bernoulli(p).sample(rng, 10**6)
    assert abs(draws.mean() - p) < 4 * math.sqrt(p * (1 - p) / 10**6)
    draws = Exponential(0.71).sample(rng, 10**6)
    assert abs(draws.mean() - 1 / 0.71) < 4 * (1 / 0.71) / 1000


@pytest.mark.parametrize("k", [2, 10])
def test_exponential_scale_identity(k):
    for n in (1, 3, 17, 60):
        assert cumulative_coefficient(Exponential(0.71), n, 14) == \
            cumulative_coefficient(Exponential(0.71 / k), n, 14 * k)


def test_exponential_ratio_tends_to_zero():
    c = coefficient_table(Exponential(0.71), 14.0).values(102)
    ratio = c[2:] / c[1:-1]
    tail = ratio[30:]
    assert np.all(tail < 1)
    assert np.all(np.diff(tail) < 0)
    assert tail[-1] < 0.15


@pytest.mark.parametrize("family,threshold", [(Bernoulli(0.36), 7.0), (Poisson(1.23), 19.0)])
def test_discrete_ratio_tends_to_atom(family, threshold):
    c = coefficient_table(family, threshold).values(202)
    n = np.arange(20, 201)
    dev = np.abs(c[n + 1] / c[n] - family.prob_zero())
    k = np.max(dev * n)
    assert np.all(dev <= k / n + 1e-15)
    # the fitted constant is moderate, i.e. the deviation really decays like 1/n
    assert k < 50


def test_parse_family_and_domain_errors():
    assert parse_family("exponential:0.71") == Exponential(0.71)
    assert parse_family("Bernoulli: 0.5") == Bernoulli(0.5)
    assert str(parse_family("poisson:1.23")) == "poisson:1.23"
    with pytest.raises(ParameterDomainError):
        parse_family("gamma:2")
    with pytest.raises(ParameterDomainError):
        Bernoulli(1.0)
    with pytest.raises(ParameterDomainError):
        Exponential(-1)
    with pytest.raises(ParameterDomainError):
        Dirac(0)
    with pytest.raises(ParameterDomainError):
        cumulative_coefficient(Dirac(1), -1, 3)
    with pytest.raises(ParameterDomainError):
        cumulative_coefficient(Dirac(1), 2, 0)


def test_table_concurrent_growth():
    from concurrent.futures import ThreadPoolExecutor

    table = coefficient_table(Exponential(0.33), 9.0)
    sizes = [50, 500, 5000, 64, 3000, 10, 2048] * 4
    with ThreadPoolExecutor(4) as pool:
        out = list(pool.map(lambda s: table.values(s).copy(), sizes))
    full = table.values(5000)
    for size, values in zip(sizes, out):
        np.testing.assert_array_equal(values, full[:size])
