import math

import numpy as np
import pytest
from scipy import integrate

from conftest import CASES, LAM, case_a, case_b, case_c
from hitcrest import (
    Bernoulli,
    Dirac,
    Exponential,
    EvaluationError,
    ModelSpec,
    Poisson,
    SeriesControl,
    TruncationError,
    density_y,
    diagonal_density,
    hazard,
    joint_density_ac,
    marginal_cdf,
    outcome_density,
    outcome_probabilities,
    poisson_mixture,
    predicted_prob_uncensored,
    prob_equal,
    quantile_y,
    survival_y,
)
from hitcrest.model import log_outcome_density


def _upper(spec):
    return quantile_y(spec, 1 - 1e-13)


# ------------------------------------------------------------ mixture kernel

@pytest.mark.parametrize("lam", [0.1, 1.0, 10.0])
def test_mixture_of_ones_is_one(lam):
    t = np.linspace(0, 100, 401)
    np.testing.assert_allclose(poisson_mixture(lambda n: np.ones(len(n)), lam, t), 1.0, atol=1e-10)


def test_single_term_mixture():
    assert poisson_mixture([1.0], 2.0, 3.0) == pytest.approx(math.exp(-6), rel=1e-12)


def test_mixture_matches_closed_form():
    t = np.linspace(0, 50, 501)
    value = poisson_mixture(lambda n: 0.5 ** n, 1.0, t)
    np.testing.assert_allclose(value, np.exp(-t / 2), rtol=1e-10, atol=1e-300)


@pytest.mark.parametrize("lam2,ratio", [(2 / 3, 0.25), (0.75, 1 / 3)])
def test_distinct_intensities_give_identical_mixtures(lam2, ratio):
    # e^{-t} sum (1/2)^n t^n/n! = e^{-t/2}; geometric coefficients r^n at intensity l
    # give e^{-l (1 - r) t}, so any pair with l (1 - r) = 1/2 matches exactly
    t = np.linspace(0, 50, 501)
    control = SeriesControl(epsilon=1e-12)
    first = poisson_mixture(lambda n: 0.5 ** n, 1.0, t, control)
    second = poisson_mixture(lambda n: ratio ** n, lam2, t, control)
    assert np.max(np.abs(first - second)) < 1e-9


def test_mixture_rejects_negative_time():
    with pytest.raises(ValueError):
        poisson_mixture([1.0], 1.0, -1.0)


def test_mixture_hard_cap():
    with pytest.raises(TruncationError):
        poisson_mixture(lambda n: np.ones(len(n)) * 0.5, 1.0, 5e4, SeriesControl(1e-10, 60))


def test_large_intensity_time_does_not_underflow():
    spec = case_b()
    t = np.array([2000.0, 20000.0])
    assert np.all(np.isfinite(log_outcome_density(spec, t, np.array([0, 0]))[0]))


# ------------------------------------------------------------ outcome densities

@pytest.mark.parametrize("variant", ["I", "II"])
def test_outcome_densities_normalize(case_name, variant):
    spec = CASES[case_name](variant)
    upper = _upper(spec)
    total = 0.0
    for d in spec.variant.deltas:
        total += integrate.quad(lambda t: outcome_density(spec, t, d), 0, upper, limit=400)[0]
    assert total == pytest.approx(1.0, abs=1e-6)
    assert sum(outcome_probabilities(spec).values()) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("variant", ["I", "II"])
def test_series_masses_match_quadrature(case_name, variant):
    spec = CASES[case_name](variant)
    upper = _upper(spec)
    probs = outcome_probabilities(spec)
    for d, mass in probs.items():
        quad = integrate.quad(lambda t: outcome_density(spec, t, d), 0, upper, limit=400)[0]
        assert quad == pytest.approx(mass, abs=1e-7)


def test_decomposition_identity(case_name):
    t = np.linspace(0, 40, 161)
    one = outcome_density(CASES[case_name]("I"), t, 1)
    split = outcome_density(CASES[case_name]("II"), t, 1) + outcome_density(CASES[case_name]("II"), t, 2)
    np.testing.assert_allclose(one, split, rtol=1e-12, atol=1e-300)


def test_case_a_at_zero():
    assert outcome_density(case_a(), 0.0, 1) == 0.0


def test_invalid_delta():
    with pytest.raises(ValueError):
        outcome_density(case_a("I"), 1.0, 2)
    with pytest.raises(ValueError):
        outcome_density(case_a("II"), 1.0, 3)


# ------------------------------------------------------------ ties and totals

def test_prob_equal_deterministic():
    assert prob_equal(ModelSpec(1.0, Dirac(1), 1.5, Dirac(1), 3.5)) == 0.0
    assert prob_equal(ModelSpec(1.0, Dirac(5), 3, Dirac(9), 7)) == 1.0
    assert predicted_prob_uncensored(ModelSpec(1.0, Dirac(5), 3, Dirac(9), 7)) == 1.0


@pytest.mark.parametrize("lam", [0.5, LAM, 9.0])
def test_prob_equal_free_of_intensity(case_name, lam):
    from dataclasses import replace

    spec = CASES[case_name]()
    assert prob_equal(replace(spec, lam=lam)) == prob_equal(spec)


def test_degenerate_spec_has_one_empty_outcome():
    spec = ModelSpec(1.0, Dirac(1), 1.5, Dirac(1), 3.5)
    assert spec.is_degenerate
    t = np.linspace(0, 20, 81)
    assert np.all(outcome_density(spec, t, 0) == 0.0) or np.all(outcome_density(spec, t, 1) == 0.0)


def test_table_one_uncensored_probability():
    spec = ModelSpec(7.889, Exponential(25.673), 0.95, Exponential(33.602), 0.65)
    value = predicted_prob_uncensored(spec)
    assert abs(value - 0.381685) < 2e-3
    scaled = ModelSpec(7.889, Exponential(2.5673), 9.5, Exponential(3.3602), 6.5)
    assert predicted_prob_uncensored(scaled) == pytest.approx(value, abs=1e-10)


# ------------------------------------------------------------ survival / hazard

def test_survival_basics():
    spec = case_b()
    t = np.arange(0, 20.5, 0.5)
    s = survival_y(spec, t)
    assert s[0] == 1.0
    assert np.all(np.diff(s) <= 0)
    assert np.all((s >= 0) & (s <= 1))


def test_survival_matches_integrated_density(case_name):
    spec = CASES[case_name]()
    for t in (1.0, 5.0, 12.0):
        mass = integrate.quad(lambda s: density_y(spec, s), 0, t, limit=200)[0]
        assert 1 - survival_y(spec, t) == pytest.approx(mass, abs=1e-6)


def test_hazard_at_zero(case_name):
    spec = CASES[case_name]()
    # 1 - c1X c1Z written as (1 - c1X) + c1X (1 - c1Z) to avoid cancellation
    dx = math.exp(spec.table_x.log_drops(1)[0])
    dz = math.exp(spec.table_z.log_drops(1)[0])
    expected = spec.lam * (dx + spec.table_x[1] * dz)
    assert hazard(spec, 0.0) == pytest.approx(expected, rel=1e-12, abs=1e-300)


def test_hazard_routes_agree(case_name):
    spec = CASES[case_name]()
    t = np.linspace(0.1, 60, 120)
    keep = survival_y(spec, t) > 1e-12
    ratio = hazard(spec, t[keep], route="ratio")
    quotient = hazard(spec, t[keep], route="quotient")
    np.testing.assert_allclose(ratio, quotient, rtol=1e-8)


def test_hazard_limits():
    # continuous jumps: hazard tends to the intensity
    assert abs(hazard(case_b(), 5000.0) / LAM - 1) < 0.01
    # two discrete laws with atoms at zero: hazard tends to lam (1 - P[X=0] P[Z=0])
    limit = LAM * (1 - 0.64 * math.exp(-1.23))
    assert hazard(case_c(), 5000.0) == pytest.approx(limit, rel=0.01)


def test_hazard_bounded_by_intensity(case_name):
    t = np.linspace(0, 20, 201)
    h = hazard(CASES[case_name](), t)
    assert np.all(h >= 0) and np.all(h <= LAM * (1 + 1e-9))


def test_hazard_underflow_raises():
    spec = ModelSpec(1.0, Dirac(1.0), 3.0, Dirac(1.0), 3.0)
    with pytest.raises(EvaluationError, match="t="):
        hazard(spec, 1e4)


# ------------------------------------------------------------ marginals

def test_marginal_cdf_properties(case_name):
    spec = CASES[case_name]()
    t = np.linspace(0, 60, 241)
    for which in ("T", "C"):
        f = marginal_cdf(spec, which, t)
        assert f[0] == 0.0
        assert np.all(np.diff(f) >= -1e-12)  # summation rounding near 1
        assert np.all((f >= 0) & (f <= 1))
    observed = np.array([integrate.quad(lambda s: outcome_density(spec, s, 1), 0, u)[0] for u in t[::20]])
    assert np.all(marginal_cdf(spec, "T", t[::20]) >= observed - 1e-12)


def test_marginal_cdf_matches_simulated_crossings(case_name):
    from hitcrest import simulate_latent

    spec = CASES[case_name]()
    T, C = simulate_latent(spec, 10**6, seed=3)
    grid = np.linspace(0, np.quantile(T, 0.999), 400)
    emp = np.searchsorted(np.sort(T), grid, side="right") / T.size
    assert np.max(np.abs(emp - marginal_cdf(spec, "T", grid))) < 0.005


# ------------------------------------------------------------ joint law

def test_joint_density_rejects_diagonal():
    with pytest.raises(ValueError):
        joint_density_ac(case_b(), 2.0, 2.0)


def test_joint_density_symmetry():
    spec = case_b()
    swapped = ModelSpec(spec.lam, spec.family_z, spec.z, spec.family_x, spec.x)
    for u, v in [(1.0, 2.5), (4.0, 3.0), (0.2, 9.0)]:
        assert joint_density_ac(spec, u, v) == pytest.approx(joint_density_ac(swapped, v, u), rel=1e-13)


@pytest.mark.slow
def test_joint_law_normalizes_case_b():
    spec = case_b()
    top = 80.0

    def f(v, u):
        return joint_density_ac(spec, u, v) if u != v else 0.0

    below = integrate.dblquad(f, 0, top, lambda u: u, lambda u: top, epsabs=1e-7)[0]
    above = integrate.dblquad(f, 0, top, 0, lambda u: u, epsabs=1e-7)[0]
    diag = integrate.quad(lambda u: diagonal_density(spec, u), 0, top)[0]
    assert below + above + diag == pytest.approx(1.0, abs=1e-4)


def test_diagonal_density_integrates_to_tie_probability():
    spec = case_a()
    mass = integrate.quad(lambda u: diagonal_density(spec, u), 0, _upper(spec), limit=200)[0]
    assert mass == pytest.approx(prob_equal(spec), abs=1e-6)


def test_diagonal_density_is_tie_outcome_density(case_name):
    t = np.linspace(0, 30, 61)
    spec = CASES[case_name]("II")
    np.testing.assert_array_equal(diagonal_density(spec, t), outcome_density(spec, t, 2))
    u0 = spec.lam * math.exp(spec.table_x.log_drops(1)[0] + spec.table_z.log_drops(1)[0])
    assert diagonal_density(spec, 0.0) == pytest.approx(u0, rel=1e-13, abs=1e-300)


# ------------------------------------------------------------ scaling

@pytest.mark.parametrize("k", [2.0, 10.0])
def test_exponential_scaling_of_density_surface(k):
    spec = case_b("II")
    scaled = ModelSpec(spec.lam, Exponential(0.71 / k), 14 * k, Exponential(2.04 / k), 7 * k, "II")
    t = np.linspace(0, 30, 31)
    for d in (0, 1, 2):
        np.testing.assert_array_equal(outcome_density(spec, t, d), outcome_density(scaled, t, d))
