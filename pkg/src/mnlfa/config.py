"""JSON model configuration and delimited-table (de)serialization.

A config file describes the measurement model, the moderation pattern,
the penalty, optimizer settings, and (for simulation or curve tracing)
true parameter values. See the README for the full schema; the top-level
sections are ``items``, ``factors``, ``covariates``, ``loadings``,
``moderation``, ``penalty``, ``optimizer``, ``identification``,
``correlation_parameterization`` and ``truth``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .corrstruct import gamma_from_partial_corrs
from .estimate import FitConfig
from .likelihood import Dataset
from .model import (
    ModelSpec,
    ParameterSet,
    corr_pairs,
    empty_moderation,
    n_corr_params,
    validate_parameters,
)
from .penalty import PenaltyConfig

__all__ = [
    "ConfigError",
    "ModelConfig",
    "load_config",
    "parse_config",
    "dataset_from_frame",
    "estimates_frame",
    "packed_from_estimates",
]

# config-file family names -> internal mask keys
_FAMILY_KEYS = {
    "intercepts": "nu",
    "loadings": "lambda",
    "residual_variances": "theta",
    "factor_means": "alpha",
    "factor_variances": "phi",
    "factor_correlations": "gamma",
}


class ConfigError(ValueError):
    """Malformed configuration or input data."""


@dataclass
class ModelConfig:
    spec: ModelSpec
    item_names: list[str]
    factor_names: list[str]
    covariate_names: list[str]
    pen_cfg: PenaltyConfig
    fit_cfg: FitConfig
    truth: ParameterSet | None

    @property
    def coordinate_names(self) -> list[str]:
        return self.spec.coordinate_names(
            self.item_names, self.factor_names, self.covariate_names
        )


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _name_list(cfg, key, prefix, required=True):
    value = cfg.get(key)
    if value is None:
        if required:
            raise ConfigError(f"config is missing required section {key!r}")
        return []
    if isinstance(value, int):
        return [f"{prefix}{k + 1}" for k in range(value)]
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        if len(set(value)) != len(value):
            raise ConfigError(f"{key} contains duplicate names")
        return list(value)
    raise ConfigError(f"{key} must be an integer count or a list of names")


def _index(names, name, what):
    try:
        return names.index(name)
    except ValueError:
        raise ConfigError(f"unknown {what} {name!r}; known: {names}") from None


def _pair_index(pairs, factor_names, key):
    parts = key.split(":")
    if len(parts) != 2:
        raise ConfigError(f"factor pair key {key!r} must look like 'f1:f2'")
    a = _index(factor_names, parts[0], "factor")
    b = _index(factor_names, parts[1], "factor")
    if a == b:
        raise ConfigError(f"factor pair key {key!r} names the same factor twice")
    i, j = max(a, b), min(a, b)
    return pairs.index((i, j))


def _parse_loadings(cfg, items, factors):
    raw = cfg.get("loadings")
    if raw is None:
        return np.full((len(items), len(factors)), np.nan)
    if not isinstance(raw, list) or len(raw) != len(items):
        raise ConfigError(f"loadings must be a list of {len(items)} rows")
    pattern = np.empty((len(items), len(factors)))
    for i, row in enumerate(raw):
        if not isinstance(row, list) or len(row) != len(factors):
            raise ConfigError(
                f"loadings row {i} ({items[i]}) must have {len(factors)} entries"
            )
        for m, entry in enumerate(row):
            if entry is None or (isinstance(entry, str) and entry.lower() == "free"):
                pattern[i, m] = np.nan
            elif isinstance(entry, (int, float)) and not isinstance(entry, bool):
                pattern[i, m] = float(entry)
            else:
                raise ConfigError(
                    f"loadings[{i}][{m}] must be a number or \"free\", got {entry!r}"
                )
    return pattern


def _covariate_list(value, covariates, context):
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConfigError(f"{context} must be a list of covariate names")
    return [_index(covariates, v, "covariate") for v in value]


def _parse_moderation(cfg, items, factors, covariates, pairs):
    masks = empty_moderation(len(items), len(factors), len(covariates))
    masks = {k: v.copy() for k, v in masks.items()}
    for k in masks:
        masks[k].setflags(write=True)
    section = cfg.get("moderation", {})
    if not isinstance(section, dict):
        raise ConfigError("moderation must be an object keyed by family name")

    def positions(family, key):
        if family == "nu" or family == "theta":
            return [( _index(items, key, "item"), )]
        if family == "lambda":
            parts = key.split(":")
            if len(parts) != 2:
                raise ConfigError(f"loading key {key!r} must look like 'item:factor'")
            return [(_index(items, parts[0], "item"), _index(factors, parts[1], "factor"))]
        if family in ("alpha", "phi"):
            return [( _index(factors, key, "factor"), )]
        return [( _pair_index(pairs, factors, key), )]

    for fam_key, entry in section.items():
        if fam_key not in _FAMILY_KEYS:
            raise ConfigError(
                f"unknown moderation family {fam_key!r}; expected one of "
                f"{sorted(_FAMILY_KEYS)}"
            )
        fam = _FAMILY_KEYS[fam_key]
        mask = masks[fam]
        if isinstance(entry, list):
            cov_idx = _covariate_list(entry, covariates, f"moderation.{fam_key}")
            for p in cov_idx:
                mask[..., p] = True
        elif isinstance(entry, dict):
            for key, covs in entry.items():
                cov_idx = _covariate_list(covs, covariates, f"moderation.{fam_key}.{key}")
                for pos in positions(fam, key):
                    for p in cov_idx:
                        mask[pos + (p,)] = True
        else:
            raise ConfigError(
                f"moderation.{fam_key} must be a covariate list or an object"
            )
    return masks


def _apply_truth_deltas(cfg_deltas, masks, arrays, items, factors, covariates, pairs):
    """Fill delta arrays from the truth section, extending masks as needed."""
    if not isinstance(cfg_deltas, dict):
        raise ConfigError("truth.deltas must be an object keyed by family name")
    attr_of = {"nu": "delta_nu", "lambda": "delta_lambda", "theta": "delta_theta",
               "alpha": "delta_alpha", "phi": "delta_phi", "gamma": "delta_gamma"}
    for fam_key, entry in cfg_deltas.items():
        if fam_key not in _FAMILY_KEYS:
            raise ConfigError(f"unknown truth delta family {fam_key!r}")
        fam = _FAMILY_KEYS[fam_key]
        if not isinstance(entry, dict):
            raise ConfigError(f"truth.deltas.{fam_key} must be an object")
        for key, per_cov in entry.items():
            if not isinstance(per_cov, dict):
                raise ConfigError(
                    f"truth.deltas.{fam_key}.{key} must map covariate names to values"
                )
            if fam in ("nu", "theta"):
                pos = (_index(items, key, "item"),)
            elif fam == "lambda":
                parts = key.split(":")
                if len(parts) != 2:
                    raise ConfigError(f"loading key {key!r} must look like 'item:factor'")
                pos = (_index(items, parts[0], "item"),
                       _index(factors, parts[1], "factor"))
            elif fam in ("alpha", "phi"):
                pos = (_index(factors, key, "factor"),)
            else:
                pos = (_pair_index(pairs, factors, key),)
            for cov_name, value in per_cov.items():
                p = _index(covariates, cov_name, "covariate")
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    raise ConfigError(
                        f"truth.deltas.{fam_key}.{key}.{cov_name} must be a number"
                    )
                masks[fam][pos + (p,)] = True
                arrays[attr_of[fam]][pos + (p,)] = float(value)


def _truth_vector(section, key, n, default, what):
    raw = section.get(key)
    if raw is None:
        return np.full(n, float(default))
    arr = np.asarray(raw, dtype=float)
    if arr.shape != (n,):
        raise ConfigError(f"truth.{key} must have {n} entries ({what})")
    return arr


def parse_config(cfg: dict) -> ModelConfig:
    """Build the model spec, penalty, optimizer and truth from a config dict."""
    items = _name_list(cfg, "items", "y")
    factors = _name_list(cfg, "factors", "f")
    covariates = _name_list(cfg, "covariates", "x", required=False)
    pairs = corr_pairs(len(factors))
    pattern = _parse_loadings(cfg, items, factors)

    corr_param = cfg.get("correlation_parameterization", "partial_correlation")
    identification = cfg.get("identification", "standardized_baseline")

    truth_section = cfg.get("truth")
    masks = _parse_moderation(cfg, items, factors, covariates, pairs)

    m = n_corr_params(len(factors))
    delta_arrays = {
        "delta_nu": np.zeros((len(items), len(covariates))),
        "delta_lambda": np.zeros((len(items), len(factors), len(covariates))),
        "delta_theta": np.zeros((len(items), len(covariates))),
        "delta_alpha": np.zeros((len(factors), len(covariates))),
        "delta_phi": np.zeros((len(factors), len(covariates))),
        "delta_gamma": np.zeros((m, len(covariates))),
    }
    if truth_section is not None and "deltas" in truth_section:
        _apply_truth_deltas(
            truth_section["deltas"], masks, delta_arrays, items, factors, covariates, pairs
        )

    try:
        spec = ModelSpec(
            n_items=len(items),
            n_factors=len(factors),
            n_covariates=len(covariates),
            loading_pattern=pattern,
            moderated=masks,
            corr_param=corr_param,
            identification=identification,
        )
    except ValueError as err:
        raise ConfigError(str(err)) from None

    pen_cfg = _parse_penalty(cfg.get("penalty", {}), spec)
    fit_cfg = _parse_optimizer(cfg.get("optimizer", {}))

    truth = None
    if truth_section is not None:
        truth = _parse_truth(truth_section, spec, items, factors, delta_arrays, corr_param)
    return ModelConfig(
        spec=spec, item_names=items, factor_names=factors,
        covariate_names=covariates, pen_cfg=pen_cfg, fit_cfg=fit_cfg, truth=truth,
    )


def _parse_truth(section, spec, items, factors, delta_arrays, corr_param):
    if not isinstance(section, dict):
        raise ConfigError("truth must be an object")
    I, M = spec.n_items, spec.n_factors
    nu0 = _truth_vector(section, "intercepts", I, 0.0, "one per item")
    resid = _truth_vector(section, "residual_variances", I, 0.5, "one per item")
    if (resid <= 0).any():
        raise ConfigError("truth.residual_variances must be positive")
    means = _truth_vector(section, "factor_means", M, 0.0, "one per factor")
    variances = _truth_vector(section, "factor_variances", M, 1.0, "one per factor")
    if (variances <= 0).any():
        raise ConfigError("truth.factor_variances must be positive")

    raw_load = section.get("loadings")
    pat = spec.loading_pattern
    if raw_load is None:
        lambda0 = np.where(np.isnan(pat), 0.8, pat)
    else:
        lambda0 = np.asarray(raw_load, dtype=float)
        if lambda0.shape != (I, M):
            raise ConfigError(f"truth.loadings must be a {I}x{M} matrix")
        fixed = ~np.isnan(pat)
        if fixed.any() and not np.allclose(lambda0[fixed], pat[fixed], atol=1e-12):
            raise ConfigError(
                "truth.loadings conflicts with fixed values in the loadings pattern"
            )

    n_pairs = n_corr_params(M)
    if "factor_correlations_unconstrained" in section:
        gamma0 = np.asarray(section["factor_correlations_unconstrained"], dtype=float)
        if gamma0.shape != (n_pairs,):
            raise ConfigError(
                f"truth.factor_correlations_unconstrained must have {n_pairs} entries"
            )
    else:
        t = _truth_vector(section, "factor_correlations", n_pairs, 0.0, "one per factor pair")
        if np.any(np.abs(t) >= 1):
            raise ConfigError("truth.factor_correlations must lie strictly inside (-1, 1)")
        gamma0 = gamma_from_partial_corrs(t, corr_param) if n_pairs else np.zeros(0)

    truth = ParameterSet(
        nu0=nu0, lambda0=lambda0, log_theta0=np.log(resid),
        alpha0=means, log_phi0=np.log(variances), gamma0=gamma0,
        **delta_arrays,
    )
    try:
        validate_parameters(truth, spec)
    except ValueError as err:
        raise ConfigError(f"truth parameters inconsistent with the model: {err}") from None
    return truth


def _parse_penalty(section, spec: ModelSpec) -> PenaltyConfig:
    if not isinstance(section, dict):
        raise ConfigError("penalty must be an object")
    kind = section.get("kind", "none")
    grouping = section.get("blocks", "family_by_covariate")
    try:
        blocks = spec.delta_penalty_blocks(grouping) if kind != "none" else []
        return PenaltyConfig(
            kind=kind,
            w0=float(section.get("w0", 0.0)),
            nu_scale=float(section.get("nu_scale", 1.0)),
            epsilon=float(section.get("epsilon", 1e-8)),
            blocks=blocks,
        )
    except (ValueError, TypeError) as err:
        raise ConfigError(f"invalid penalty section: {err}") from None


def _parse_optimizer(section) -> FitConfig:
    if not isinstance(section, dict):
        raise ConfigError("optimizer must be an object")
    known = {"max_iter", "grad_tol", "obj_rel_tol", "n_starts", "start_jitter", "seed"}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown optimizer options: {sorted(unknown)}")
    try:
        return FitConfig(
            max_iter=int(section.get("max_iter", 500)),
            grad_tol=float(section.get("grad_tol", 1e-5)),
            obj_rel_tol=float(section.get("obj_rel_tol", 1e-8)),
            n_starts=int(section.get("n_starts", 1)),
            start_jitter=float(section.get("start_jitter", 0.1)),
            seed=int(section.get("seed", 0)),
        )
    except (ValueError, TypeError) as err:
        raise ConfigError(f"invalid optimizer section: {err}") from None


# ---- Data ingestion ----

def dataset_from_frame(df: pd.DataFrame, mc: ModelConfig, missing: str = "fiml") -> Dataset:
    """Build a Dataset from a raw table, validating against the config."""
    for col in mc.item_names + mc.covariate_names:
        if col not in df.columns:
            raise ConfigError(f"data file is missing required column {col!r}")
    try:
        Y = df[mc.item_names].apply(pd.to_numeric, errors="raise").to_numpy(dtype=float)
        X = df[mc.covariate_names].apply(pd.to_numeric, errors="raise").to_numpy(dtype=float)
    except (ValueError, TypeError) as err:
        raise ConfigError(f"non-numeric value in data file: {err}") from None
    if X.size and not np.isfinite(X).all():
        bad = mc.covariate_names[
            int(np.flatnonzero(~np.isfinite(X).all(axis=0))[0])
        ]
        raise ConfigError(f"covariate column {bad!r} has missing values")
    X = X.reshape(len(df), len(mc.covariate_names))
    try:
        ds = Dataset(Y, np.asarray(X), item_names=mc.item_names,
                     covariate_names=mc.covariate_names)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    if missing == "listwise":
        ds = ds.listwise()
    elif missing != "fiml":
        raise ConfigError(f"unknown missing-data mode {missing!r}")
    return ds


# ---- Estimate tables ----

def estimates_frame(
    packed: np.ndarray,
    mc: ModelConfig,
    std_errors: np.ndarray | None = None,
    pen_cfg: PenaltyConfig | None = None,
) -> pd.DataFrame:
    """Long-format estimates table: parameter, block, estimate, std_error, penalized."""
    spec = mc.spec
    names = mc.coordinate_names
    blocks = spec.block_of_coordinate()
    pen_on = pen_cfg is not None and pen_cfg.kind != "none" and pen_cfg.w0 > 0.0
    penalized = np.zeros(spec.n_free, dtype=bool)
    if pen_on:
        penalized[spec.delta_slice] = True
    se = np.full(spec.n_free, np.nan) if std_errors is None else np.asarray(std_errors)
    return pd.DataFrame(
        {
            "parameter": names,
            "block": blocks,
            "estimate": np.asarray(packed, dtype=float),
            "std_error": se,
            "penalized": penalized,
        }
    )


def packed_from_estimates(df: pd.DataFrame, mc: ModelConfig) -> np.ndarray:
    """Reconstruct a packed vector from an estimates table by parameter name."""
    if "parameter" not in df.columns or "estimate" not in df.columns:
        raise ConfigError("estimates table needs 'parameter' and 'estimate' columns")
    names = mc.coordinate_names
    lookup = dict(zip(df["parameter"], df["estimate"]))
    missing = [n for n in names if n not in lookup]
    if missing:
        raise ConfigError(f"estimates table is missing parameters: {missing[:5]}")
    return np.array([float(lookup[n]) for n in names])
