"""Moderated nonlinear factor analysis with penalized maximum likelihood.

Measurement and structural parameters are affine (variances:
log-affine) functions of observed person covariates, so measurement
non-invariance and covariate-dependent factor means, variances, and
correlations are estimated in a single model. Estimation maximizes a
composite of the full-information Gaussian log-likelihood and an
optional ridge / lasso / alignment penalty on the moderation effects.
"""

from .corrstruct import (
    CholeskyFactor,
    FactorCov,
    angle_map,
    chol_from_angles,
    chol_from_partial_corrs,
    factor_cov,
    factor_cov_batch,
    gamma_from_partial_corrs,
    tanh_map,
)
from .config import (
    ConfigError,
    ModelConfig,
    dataset_from_frame,
    estimates_frame,
    load_config,
    packed_from_estimates,
    parse_config,
)
from .estimate import (
    FitConfig,
    FitResult,
    active_delta_count,
    default_start,
    fd_hessian,
    fit,
    numerical_hessian,
    penalty_path,
    sandwich_se,
)
from .gradients import full_gradient, person_scores, value_and_gradient
from .likelihood import (
    Dataset,
    ImpliedMoments,
    NotPositiveDefiniteError,
    implied_moments,
    person_loglik,
    person_logliks,
    total_loglik,
)
from .model import (
    ANCHOR_LOADING,
    DELTA_FAMILIES,
    HYPERSPHERE,
    PARTIAL_CORRELATION,
    STANDARDIZED_BASELINE,
    DesignMatrix,
    ModelSpec,
    ParameterSet,
    PersonParams,
    corr_pairs,
    empty_moderation,
    n_corr_params,
    pack,
    resolve_person,
    resolve_population,
    unpack,
    validate_parameters,
)
from .penalty import (
    PENALTY_KINDS,
    PenaltyConfig,
    composite_objective,
    penalty_gradient,
    penalty_value,
)
from .simulate import correlation_curves, simulate_data

__version__ = "0.1.0"

__all__ = [
    "ANCHOR_LOADING",
    "DELTA_FAMILIES",
    "HYPERSPHERE",
    "PARTIAL_CORRELATION",
    "PENALTY_KINDS",
    "STANDARDIZED_BASELINE",
    "CholeskyFactor",
    "ConfigError",
    "Dataset",
    "DesignMatrix",
    "FactorCov",
    "FitConfig",
    "FitResult",
    "ImpliedMoments",
    "ModelConfig",
    "ModelSpec",
    "NotPositiveDefiniteError",
    "ParameterSet",
    "PenaltyConfig",
    "PersonParams",
    "active_delta_count",
    "angle_map",
    "chol_from_angles",
    "chol_from_partial_corrs",
    "composite_objective",
    "corr_pairs",
    "correlation_curves",
    "dataset_from_frame",
    "default_start",
    "empty_moderation",
    "estimates_frame",
    "factor_cov",
    "factor_cov_batch",
    "fd_hessian",
    "fit",
    "full_gradient",
    "gamma_from_partial_corrs",
    "implied_moments",
    "load_config",
    "n_corr_params",
    "numerical_hessian",
    "pack",
    "packed_from_estimates",
    "parse_config",
    "penalty_gradient",
    "penalty_path",
    "penalty_value",
    "person_loglik",
    "person_logliks",
    "person_scores",
    "resolve_person",
    "resolve_population",
    "sandwich_se",
    "simulate_data",
    "total_loglik",
    "unpack",
    "validate_parameters",
    "__version__",
]
