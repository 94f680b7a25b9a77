"""Unconstrained parameterizations of factor correlation matrices.

Both parameterizations build a lower-triangular matrix L with unit-norm
rows, so that R = L @ L.T is a correlation matrix (unit diagonal,
positive definite) for *any* real parameter vector:

- partial_correlation: gamma -> t = tanh(gamma) in (-1, 1); row i of L is
  built from t via ``L[i, j] = t_ij * prod_{k<j} sqrt(1 - t_ik^2)`` with
  ``L[i, i] = prod_{k<i} sqrt(1 - t_ik^2)``.
- hypersphere: gamma -> angles = pi * logistic(gamma) in (0, pi); same
  recursion with cos(angle) in place of t and sin(angle) in place of
  sqrt(1 - t^2).

For a single factor pair (two factors) the partial-correlation map
reduces to the Fisher-z inverse: R[1, 0] = tanh(gamma).

The factor covariance is Phi = D^{1/2} R D^{1/2} where D holds the
factor variances, so chol(Phi) = D^{1/2} L.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .model import HYPERSPHERE, PARTIAL_CORRELATION, n_corr_params

__all__ = [
    "CholeskyFactor",
    "FactorCov",
    "tanh_map",
    "angle_map",
    "gamma_from_partial_corrs",
    "chol_from_partial_corrs",
    "chol_from_angles",
    "factor_cov",
    "factor_cov_batch",
]

# Keep mapped values strictly inside the open interval even when the
# underlying transcendental saturates in float64 (tanh(20) rounds to 1.0).
_ONE_MINUS = 1.0 - 1e-15


def tanh_map(gamma):
    """Map unconstrained values to partial correlations in (-1, 1)."""
    return np.clip(np.tanh(gamma), -_ONE_MINUS, _ONE_MINUS)


def angle_map(gamma):
    """Map unconstrained values to angles in (0, pi).

    Increasing gamma moves the angle from 0 toward pi, so the induced
    correlation cos(angle) decreases monotonically from +1 toward -1.
    """
    return np.pi * np.clip(expit(gamma), 1e-15, _ONE_MINUS)


def gamma_from_partial_corrs(values, corr_param: str = PARTIAL_CORRELATION) -> np.ndarray:
    """Unconstrained parameters reproducing given partial-correlation values.

    Elementwise inverse of the maps above: both parameterizations share
    the same lower-triangular construction, with cos(angle) playing the
    role of the partial correlation, so a hypersphere model reproduces
    the same R from gamma = logit(arccos(t) / pi).
    """
    t = np.asarray(values, dtype=float)
    if np.any(np.abs(t) >= 1.0):
        raise ValueError("partial correlations must lie strictly inside (-1, 1)")
    if corr_param == PARTIAL_CORRELATION:
        return np.arctanh(t)
    if corr_param == HYPERSPHERE:
        u = np.arccos(t) / np.pi
        return np.log(u) - np.log1p(-u)
    raise ValueError(f"unknown corr_param {corr_param!r}")


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor with unit-norm rows; R = L @ L.T."""

    L: np.ndarray


@dataclass(frozen=True)
class FactorCov:
    """Factor covariance Phi = D^{1/2} R D^{1/2} with its building blocks.

    ``L`` is the unit-row lower-triangular factor of R, so that
    ``sqrt(D)[:, None] * L`` is a Cholesky factor of Phi.
    """

    Phi: np.ndarray
    R: np.ndarray
    D: np.ndarray
    L: np.ndarray


def _chol_from_cos_sin(c: np.ndarray, s: np.ndarray, n_factors: int) -> np.ndarray:
    """Shared lower-triangular recursion; c and s may be batched (..., M').

    ``c`` plays the partial-correlation role, ``s`` the complementary
    root; rows of the result have unit norm whenever c**2 + s**2 == 1.
    """
    batch = c.shape[:-1]
    L = np.zeros(batch + (n_factors, n_factors), dtype=float)
    L[..., 0, 0] = 1.0
    k = 0
    for i in range(1, n_factors):
        prod = np.ones(batch, dtype=float)
        for j in range(i):
            L[..., i, j] = c[..., k] * prod
            prod = prod * s[..., k]
            k += 1
        L[..., i, i] = prod
    return L


def chol_from_partial_corrs(pcorr: np.ndarray) -> CholeskyFactor:
    """Build the unit-row triangular factor from partial correlations.

    ``pcorr`` holds the lower-triangle entries in row-major pair order
    and every entry must lie strictly inside (-1, 1).
    """
    t = np.asarray(pcorr, dtype=float).reshape(-1)
    if np.any(np.abs(t) >= 1.0):
        raise ValueError("partial correlations must lie strictly inside (-1, 1)")
    M = _n_factors_from_pairs(t.size)
    return CholeskyFactor(_chol_from_cos_sin(t, np.sqrt(1.0 - t * t), M))


def chol_from_angles(angles: np.ndarray) -> CholeskyFactor:
    """Build the unit-row triangular factor from hypersphere angles in (0, pi)."""
    a = np.asarray(angles, dtype=float).reshape(-1)
    if np.any((a <= 0.0) | (a >= np.pi)):
        raise ValueError("angles must lie strictly inside (0, pi)")
    M = _n_factors_from_pairs(a.size)
    return CholeskyFactor(_chol_from_cos_sin(np.cos(a), np.sin(a), M))


def _n_factors_from_pairs(n_pairs: int) -> int:
    M = int(round((1 + np.sqrt(1 + 8 * n_pairs)) / 2))
    if n_corr_params(M) != n_pairs:
        raise ValueError(f"{n_pairs} is not a valid pair count M*(M-1)/2")
    return M


def factor_cov(gamma: np.ndarray, phi_diag: np.ndarray, corr_param: str) -> FactorCov:
    """Factor covariance for one person from unconstrained parameters."""
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    phi_diag = np.asarray(phi_diag, dtype=float).reshape(-1)
    Phi, R, L = factor_cov_batch(gamma[None, :], phi_diag[None, :], corr_param)
    return FactorCov(Phi=Phi[0], R=R[0], D=phi_diag.copy(), L=L[0])


def factor_cov_batch(gamma: np.ndarray, phi_diag: np.ndarray, corr_param: str):
    """Batched factor covariances: gamma (N, M'), phi_diag (N, M).

    Returns (Phi, R, L), each of shape (N, M, M).
    """
    gamma = np.asarray(gamma, dtype=float)
    phi_diag = np.asarray(phi_diag, dtype=float)
    M = phi_diag.shape[-1]
    if corr_param == PARTIAL_CORRELATION:
        t = tanh_map(gamma)
        L = _chol_from_cos_sin(t, np.sqrt(1.0 - t * t), M)
    elif corr_param == HYPERSPHERE:
        a = angle_map(gamma)
        L = _chol_from_cos_sin(np.cos(a), np.sin(a), M)
    else:
        raise ValueError(f"unknown corr_param {corr_param!r}")
    R = L @ np.swapaxes(L, -1, -2)
    root = np.sqrt(phi_diag)
    Phi = root[..., :, None] * R * root[..., None, :]
    return Phi, R, L
