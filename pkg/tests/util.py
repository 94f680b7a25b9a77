"""Shared test helpers: random model generators and FD oracles."""

from __future__ import annotations

import warnings

import numpy as np

from mnlfa import (
    ANCHOR_LOADING,
    STANDARDIZED_BASELINE,
    Dataset,
    DesignMatrix,
    ModelSpec,
    ParameterSet,
    empty_moderation,
    n_corr_params,
)


def rand_spec(
    rng,
    n_items,
    n_factors,
    n_covariates,
    corr_param="partial_correlation",
    identification=STANDARDIZED_BASELINE,
    moderate_all_families=True,
    cross_loading_prob=0.15,
):
    """Random ModelSpec with simple-ish structure and moderation masks."""
    pattern = np.zeros((n_items, n_factors))
    for i in range(n_items):
        pattern[i, i % n_factors] = np.nan
    cross = rng.random((n_items, n_factors)) < cross_loading_prob
    pattern[cross] = np.nan
    if identification == ANCHOR_LOADING:
        for m in range(n_factors):
            anchor = int(np.argmax(np.isnan(pattern[:, m])))
            pattern[anchor, m] = 1.0

    masks = {k: v.copy() for k, v in empty_moderation(n_items, n_factors, n_covariates).items()}
    if n_covariates and moderate_all_families:
        free_load = np.isnan(pattern)

        def pick(mask, allowed=None):
            flat = np.flatnonzero(np.ones(mask.shape) if allowed is None else allowed)
            if flat.size == 0:
                return
            n_on = 1 + int(rng.integers(0, max(1, flat.size // 3)))
            for idx in rng.choice(flat, size=min(n_on, flat.size), replace=False):
                pos = np.unravel_index(idx, mask.shape[:-1]) if mask.ndim > 1 else (idx,)
                mask[pos + (int(rng.integers(n_covariates)),)] = True

        pick(masks["nu"], np.ones(n_items, dtype=bool))
        pick(masks["lambda"], free_load)
        pick(masks["theta"], np.ones(n_items, dtype=bool))
        pick(masks["alpha"], np.ones(n_factors, dtype=bool))
        pick(masks["phi"], np.ones(n_factors, dtype=bool))
        if n_corr_params(n_factors):
            pick(masks["gamma"], np.ones(n_corr_params(n_factors), dtype=bool))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return ModelSpec(
            n_items=n_items,
            n_factors=n_factors,
            n_covariates=n_covariates,
            loading_pattern=pattern,
            moderated=masks,
            corr_param=corr_param,
            identification=identification,
        )


def rand_params(rng, spec, delta_scale=0.2):
    """Random ParameterSet consistent with the spec's masks and fixing."""
    pat = spec.loading_pattern
    lambda0 = np.where(np.isnan(pat), 0.5 + 0.5 * rng.random(pat.shape), pat)
    standardized = spec.identification == STANDARDIZED_BASELINE
    m = n_corr_params(spec.n_factors)

    def deltas(mask):
        return np.where(mask, delta_scale * rng.standard_normal(mask.shape), 0.0)

    return ParameterSet(
        nu0=0.5 * rng.standard_normal(spec.n_items),
        lambda0=lambda0,
        log_theta0=np.log(0.4 + 0.4 * rng.random(spec.n_items)),
        alpha0=np.zeros(spec.n_factors) if standardized else 0.3 * rng.standard_normal(spec.n_factors),
        log_phi0=np.zeros(spec.n_factors) if standardized else 0.3 * rng.standard_normal(spec.n_factors),
        gamma0=0.5 * rng.standard_normal(m),
        delta_nu=deltas(spec.moderated["nu"]),
        delta_lambda=deltas(spec.moderated["lambda"]),
        delta_theta=deltas(spec.moderated["theta"]),
        delta_alpha=deltas(spec.moderated["alpha"]),
        delta_phi=deltas(spec.moderated["phi"]),
        delta_gamma=deltas(spec.moderated["gamma"]),
    )


def rand_dataset(rng, spec, n_persons, missing_frac=0.0):
    """Random observations (not from the model) for gradient/objective checks."""
    Y = 1.2 * rng.standard_normal((n_persons, spec.n_items))
    if missing_frac > 0 and spec.n_items > 1:
        drop = rng.random(Y.shape) < missing_frac
        keep_one = rng.integers(spec.n_items, size=n_persons)
        drop[np.arange(n_persons), keep_one] = False
        Y[drop] = np.nan
    X = rng.standard_normal((n_persons, spec.n_covariates))
    return Dataset(Y, DesignMatrix(X, None))


def fd_gradient(f, x, h=1e-6):
    """Plain central-difference gradient with per-coordinate scaled step."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.size):
        step = h * (1.0 + abs(x[j]))
        e = np.zeros_like(x)
        e[j] = step
        g[j] = (f(x + e) - f(x - e)) / (2.0 * step)
    return g


def richardson_fd(f, x, j, h0=1e-3, levels=4):
    """Richardson-extrapolated central difference in coordinate j."""
    x = np.asarray(x, dtype=float)

    def central(h):
        e = np.zeros_like(x)
        e[j] = h
        return (f(x + e) - f(x - e)) / (2.0 * h)

    table = [[central(h0 / 2.0 ** k)] for k in range(levels)]
    for col in range(1, levels):
        for k in range(col, levels):
            prev = table[k][col - 1]
            above = table[k - 1][col - 1]
            table[k].append((4.0 ** col * prev - above) / (4.0 ** col - 1.0))
    return table[-1][-1]
