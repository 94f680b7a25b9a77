"""Person-specific implied moments and the marginal normal log-likelihood.

Each person's implied moments are ::

    mu_n    = nu_n + Lambda_n @ alpha_n
    Sigma_n = Lambda_n @ Phi_n @ Lambda_n.T + diag(theta_n)

and the person log-likelihood is the multivariate normal density of the
*observed* coordinates (missing indicators are marginalized out by
dropping their rows/columns, i.e. available-case likelihood).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corrstruct import factor_cov, factor_cov_batch
from .model import DesignMatrix, ModelSpec, ParameterSet, PersonParams, resolve_population

__all__ = [
    "NotPositiveDefiniteError",
    "Dataset",
    "ImpliedMoments",
    "implied_moments",
    "person_loglik",
    "total_loglik",
    "person_logliks",
]

_LOG_2PI = np.log(2.0 * np.pi)


class NotPositiveDefiniteError(RuntimeError):
    """Implied covariance is not positive definite (or not finite).

    ``person`` is the 0-based row index of the offending person when the
    failure occurred inside a data likelihood, else None.
    """

    def __init__(self, message: str, person: int | None = None):
        if person is not None:
            message = f"{message} (person index {person})"
        super().__init__(message)
        self.person = person


class Dataset:
    """Item responses with optional missingness plus complete covariates.

    Parameters
    ----------
    Y : ndarray (n_persons, n_items)
        Item responses; ``nan`` marks a missing response. Every row must
        retain at least one observed item.
    X : DesignMatrix or ndarray (n_persons, n_covariates)
        Person covariates; must be complete.
    item_names, covariate_names : lists of str, optional
    """

    def __init__(self, Y, X, item_names=None, covariate_names=None):
        Y = np.atleast_2d(np.array(Y, dtype=float))
        if not isinstance(X, DesignMatrix):
            X = DesignMatrix(np.asarray(X, dtype=float), covariate_names)
        if X.n_persons != Y.shape[0]:
            raise ValueError(
                f"Y has {Y.shape[0]} rows but the design matrix has {X.n_persons}"
            )
        observed = ~np.isnan(Y)
        empty = np.flatnonzero(~observed.any(axis=1))
        if empty.size:
            raise ValueError(
                f"rows with all items missing are not allowed: {empty[:10].tolist()}"
            )
        Y.setflags(write=False)
        self.Y = Y
        self.X = X
        self.item_names = list(item_names) if item_names else [
            f"y{i + 1}" for i in range(Y.shape[1])
        ]
        if len(self.item_names) != Y.shape[1]:
            raise ValueError("item_names length does not match item count")

        # Group rows by missingness pattern once; the likelihood and
        # gradient engines batch within each group.
        self.pattern_groups: list[tuple[np.ndarray, np.ndarray]] = []
        if observed.all():
            self.pattern_groups.append(
                (np.arange(Y.shape[0]), np.arange(Y.shape[1]))
            )
        else:
            patterns, inverse = np.unique(observed, axis=0, return_inverse=True)
            for k in range(patterns.shape[0]):
                rows = np.flatnonzero(inverse == k)
                obs = np.flatnonzero(patterns[k])
                self.pattern_groups.append((rows, obs))

    @property
    def n_persons(self) -> int:
        return self.Y.shape[0]

    @property
    def n_items(self) -> int:
        return self.Y.shape[1]

    @property
    def n_missing(self) -> int:
        return int(np.isnan(self.Y).sum())

    def listwise(self) -> "Dataset":
        """Complete-case subset (rows without any missing item)."""
        keep = ~np.isnan(self.Y).any(axis=1)
        if not keep.any():
            raise ValueError("listwise deletion removes every row")
        return Dataset(
            self.Y[keep], DesignMatrix(self.X.rows[keep], self.X.column_names),
            self.item_names,
        )


class ImpliedMoments:
    """Implied mean and covariance with lazily cached derived quantities."""

    def __init__(self, mu: np.ndarray, Sigma: np.ndarray):
        mu = np.array(mu, dtype=float)
        Sigma = np.array(Sigma, dtype=float)
        mu.setflags(write=False)
        Sigma.setflags(write=False)
        self.mu = mu
        self.Sigma = Sigma
        self._chol = None
        self._inv = None
        self._logdet = None

    @property
    def chol_Sigma(self) -> np.ndarray:
        if self._chol is None:
            if not np.isfinite(self.Sigma).all():
                raise NotPositiveDefiniteError("implied covariance has non-finite entries")
            try:
                self._chol = np.linalg.cholesky(self.Sigma)
            except np.linalg.LinAlgError as err:
                raise NotPositiveDefiniteError(
                    "implied covariance is not positive definite"
                ) from err
        return self._chol

    @property
    def logdet_Sigma(self) -> float:
        if self._logdet is None:
            self._logdet = 2.0 * float(np.sum(np.log(np.diagonal(self.chol_Sigma))))
        return self._logdet

    @property
    def inv_Sigma(self) -> np.ndarray:
        if self._inv is None:
            Linv = np.linalg.inv(self.chol_Sigma)
            self._inv = Linv.T @ Linv
        return self._inv

    def subset(self, obs_idx: np.ndarray) -> "ImpliedMoments":
        """Moments of the marginal distribution over a coordinate subset."""
        obs_idx = np.asarray(obs_idx, dtype=int)
        return ImpliedMoments(self.mu[obs_idx], self.Sigma[np.ix_(obs_idx, obs_idx)])


def implied_moments(pp: PersonParams, spec: ModelSpec, jitter: float = 0.0) -> ImpliedMoments:
    """Moments implied by one person's resolved parameters."""
    cov = factor_cov(pp.gamma, pp.phi_diag, spec.corr_param)
    mu = pp.nu + pp.lam @ pp.alpha
    Sigma = pp.lam @ cov.Phi @ pp.lam.T + np.diag(pp.theta)
    if jitter:
        Sigma = Sigma + jitter * np.eye(Sigma.shape[0])
    return ImpliedMoments(mu, Sigma)


def person_loglik(y_obs: np.ndarray, m: ImpliedMoments) -> float:
    """Log density of the observed coordinates under the implied moments."""
    y_obs = np.asarray(y_obs, dtype=float).reshape(-1)
    p = y_obs.size
    if m.mu.shape != (p,):
        raise ValueError(f"y has {p} coordinates but moments have {m.mu.shape[0]}")
    r = y_obs - m.mu
    quad = float(r @ m.inv_Sigma @ r)
    return -0.5 * (p * _LOG_2PI + m.logdet_Sigma + quad)


# ---- Batched engine ----
#
# All persons in a missingness-pattern group share an item subset, so the
# per-person small-matrix work is done as stacked numpy operations. The
# gradient engine (mnlfa.gradients) consumes the same group bundles.

@dataclass
class _GroupMoments:
    rows: np.ndarray      # (n,) global row indices
    obs: np.ndarray       # (p,) observed item indices
    lam: np.ndarray       # (n, p, M)
    theta: np.ndarray     # (n, p)
    resid: np.ndarray     # (n, p)
    Sinv: np.ndarray      # (n, p, p)
    logdet: np.ndarray    # (n,)
    swept: np.ndarray     # (n, p)  Sinv @ resid
    loglik: np.ndarray    # (n,)


def _invert_spd(Sigma: np.ndarray, rows: np.ndarray):
    """Batched cholesky-based inverse and log-determinant.

    Raises NotPositiveDefiniteError naming the first offending person.
    """
    if not np.isfinite(Sigma).all():
        bad = np.flatnonzero(~np.isfinite(Sigma).reshape(Sigma.shape[0], -1).all(axis=1))[0]
        raise NotPositiveDefiniteError(
            "implied covariance has non-finite entries", person=int(rows[bad])
        )
    try:
        chol = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError:
        for k in range(Sigma.shape[0]):
            try:
                np.linalg.cholesky(Sigma[k])
            except np.linalg.LinAlgError:
                raise NotPositiveDefiniteError(
                    "implied covariance is not positive definite", person=int(rows[k])
                ) from None
        raise  # pragma: no cover - batch failed but every person passed
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(axis=-1)
    Linv = np.linalg.inv(chol)
    Sinv = np.einsum("nki,nkj->nij", Linv, Linv)
    return Sinv, logdet


def _loglik_from_parts(resid, Sinv, logdet):
    swept = np.einsum("nij,nj->ni", Sinv, resid)
    quad = np.einsum("ni,ni->n", resid, swept)
    p = resid.shape[1]
    return swept, -0.5 * (p * _LOG_2PI + logdet + quad)


def _group_sigma(lam, Phi, theta, jitter=0.0):
    lamPhi = lam @ Phi
    Sigma = np.einsum("nim,njm->nij", lamPhi, lam)
    idx = np.arange(Sigma.shape[-1])
    Sigma[:, idx, idx] += theta
    if jitter:
        Sigma[:, idx, idx] += jitter
    return Sigma, lamPhi


def _batch_moments(params: ParameterSet, data: Dataset, spec: ModelSpec, jitter: float = 0.0):
    """Resolve every person and build per-group moment bundles.

    Returns (resolved arrays dict, Phi (N,M,M), groups list[_GroupMoments]).
    """
    res = resolve_population(params, data.X.rows)
    Phi, _, _ = factor_cov_batch(res["gamma"], res["phi_diag"], spec.corr_param)
    groups = []
    for rows, obs in data.pattern_groups:
        lam = res["lam"][np.ix_(rows, obs)]
        theta = res["theta"][np.ix_(rows, obs)]
        mu = res["nu"][np.ix_(rows, obs)] + np.einsum(
            "nim,nm->ni", lam, res["alpha"][rows]
        )
        Sigma, _ = _group_sigma(lam, Phi[rows], theta, jitter)
        Sinv, logdet = _invert_spd(Sigma, rows)
        resid = data.Y[np.ix_(rows, obs)] - mu
        swept, ll = _loglik_from_parts(resid, Sinv, logdet)
        groups.append(
            _GroupMoments(rows=rows, obs=obs, lam=lam, theta=theta, resid=resid,
                          Sinv=Sinv, logdet=logdet, swept=swept, loglik=ll)
        )
    return res, Phi, groups


def total_loglik(
    params: ParameterSet, data: Dataset, spec: ModelSpec, jitter: float = 0.0
) -> float:
    """Sum of person log-likelihoods over the dataset."""
    _, _, groups = _batch_moments(params, data, spec, jitter)
    return float(sum(g.loglik.sum() for g in groups))


def person_logliks(
    params: ParameterSet, data: Dataset, spec: ModelSpec, jitter: float = 0.0
) -> np.ndarray:
    """Per-person log-likelihood vector (in dataset row order)."""
    _, _, groups = _batch_moments(params, data, spec, jitter)
    out = np.empty(data.n_persons)
    for g in groups:
        out[g.rows] = g.loglik
    return out
