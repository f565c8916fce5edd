"""Bivariate first-hitting-time survival model on a shared Poisson jump clock."""
from .jumps import (
    Bernoulli,
    CoefficientTable,
    Dirac,
    Exponential,
    FamilyClass,
    JumpFamily,
    ParameterDomainError,
    Poisson,
    classify,
    coefficient_table,
    cumulative_coefficient,
    n_max,
    parse_family,
)
from .model import (
    DEFAULT_CONTROL,
    EvaluationError,
    ModelSpec,
    ModelVariant,
    Observation,
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
from .simulation import (
    DegeneracyWarning,
    HorizonError,
    simulate_arrays,
    simulate_dataset,
    simulate_latent,
    simulate_outcome,
)
from .inference import (
    BoundaryWarning,
    FitResult,
    IdentifiabilityReport,
    IdentifiabilityWarning,
    NotConvergedError,
    SingularInformationError,
    check_observations,
    fit,
    identifiability_report,
    information_matrices,
    log_likelihood,
    sandwich_covariance,
    wald_interval,
)
from .estimator import HittingTimeSurvival
from .study import (
    EmpiricalCDF,
    StudyConfig,
    StudyFailure,
    StudyResult,
    curve_export,
    empirical_cdf,
    joint_export,
    run_study,
)
from .config import ConfigError, RunConfig, load_config, loads_config

__version__ = "0.1.0"
