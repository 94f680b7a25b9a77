"""Data generation under the moderated factor model, and correlation curves."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .corrstruct import factor_cov_batch
from .likelihood import Dataset
from .model import (
    DesignMatrix,
    ModelSpec,
    ParameterSet,
    corr_pairs,
    resolve_population,
    validate_parameters,
)

__all__ = ["simulate_data", "correlation_curves"]


def simulate_data(
    truth: ParameterSet,
    spec: ModelSpec,
    X: DesignMatrix | np.ndarray,
    seed: int,
    item_names=None,
) -> Dataset:
    """Draw one dataset from the model at the true parameter values.

    Factor scores use the already-built triangular factor of each
    person's covariance (chol(Phi) = sqrt(D) * L), so no second
    factorization is performed. A fixed seed gives identical data
    regardless of how the draw is later consumed.
    """
    validate_parameters(truth, spec)
    if not isinstance(X, DesignMatrix):
        X = DesignMatrix(np.asarray(X, dtype=float))
    if X.n_covariates != spec.n_covariates:
        raise ValueError(
            f"design matrix has {X.n_covariates} covariates, spec expects {spec.n_covariates}"
        )
    res = resolve_population(truth, X.rows)
    _, _, L = factor_cov_batch(res["gamma"], res["phi_diag"], spec.corr_param)
    chol_phi = np.sqrt(res["phi_diag"])[:, :, None] * L

    rng = np.random.default_rng(seed)
    n = X.n_persons
    z = rng.standard_normal((n, spec.n_factors))
    e = rng.standard_normal((n, spec.n_items))
    eta = res["alpha"] + np.einsum("nmk,nk->nm", chol_phi, z)
    Y = res["nu"] + np.einsum("nim,nm->ni", res["lam"], eta) + np.sqrt(res["theta"]) * e
    return Dataset(Y, X, item_names=item_names)


def correlation_curves(
    gamma0: np.ndarray,
    delta_gamma: np.ndarray,
    x_grid,
    corr_param: str,
    covariate_index: int = 0,
    factor_names=None,
) -> pd.DataFrame:
    """Factor correlations as functions of a single moderator.

    ``gamma0`` holds the baseline unconstrained correlation parameters,
    ``delta_gamma`` their moderation matrix (pairs x covariates); the
    grid sweeps one covariate with the others held at zero. Returns a
    table with an ``x`` column and one column per factor pair, e.g.
    ``cor_f1_f2``.
    """
    gamma0 = np.asarray(gamma0, dtype=float).reshape(-1)
    delta_gamma = np.atleast_2d(np.asarray(delta_gamma, dtype=float))
    if delta_gamma.shape[0] != gamma0.size:
        raise ValueError(
            f"delta_gamma has {delta_gamma.shape[0]} rows, expected {gamma0.size}"
        )
    if not 0 <= covariate_index < delta_gamma.shape[1]:
        raise ValueError(f"covariate_index {covariate_index} out of range")
    x_grid = np.asarray(list(x_grid), dtype=float)
    if x_grid.size == 0:
        raise ValueError("x_grid must not be empty")

    gammas = gamma0[None, :] + np.outer(x_grid, delta_gamma[:, covariate_index])
    n_factors = int(round((1 + np.sqrt(1 + 8 * gamma0.size)) / 2))
    phi = np.ones((x_grid.size, n_factors))
    _, R, _ = factor_cov_batch(gammas, phi, corr_param)

    names = factor_names or [f"f{m + 1}" for m in range(n_factors)]
    data = {"x": x_grid}
    for i, j in corr_pairs(n_factors):
        data[f"cor_{names[j]}_{names[i]}"] = R[:, i, j]
    return pd.DataFrame(data)
