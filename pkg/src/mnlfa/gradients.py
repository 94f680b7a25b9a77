"""Analytic gradients of the penalized marginal log-likelihood.

The mean/covariance derivative of a multivariate normal log-density is
assembled from ``Qsr = Sinv @ r @ r.T @ Sinv - Sinv``: for a parameter
entering the covariance, dL = 0.5 * tr(Qsr dSigma); for one entering the
mean, dL = (Sinv r)' dmu. Log-scale variance parameters pick up their
chain factor; moderation coefficients multiply the base derivative by
the covariate value. Correlation parameters use central finite
differences of the person log-likelihood (with step widening where the
map saturates); two-factor models have an exact tanh-chain alternative
used as a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corrstruct import factor_cov, factor_cov_batch
from .likelihood import (
    Dataset,
    ImpliedMoments,
    NotPositiveDefiniteError,
    _batch_moments,
    _group_sigma,
    _invert_spd,
    _loglik_from_parts,
    implied_moments,
    person_loglik,
)
from .model import ModelSpec, ParameterSet, PersonParams, pack, unpack
from .penalty import PenaltyConfig, penalty_gradient, penalty_value

__all__ = [
    "GradWorkspace",
    "grad_nu",
    "grad_lambda",
    "grad_theta",
    "grad_alpha",
    "grad_phi_diag",
    "grad_gamma_fd",
    "grad_delta",
    "person_scores",
    "full_gradient",
    "value_and_gradient",
]

GAMMA_FD_EPS = 1e-6


@dataclass
class GradWorkspace:
    """Per-person pieces shared by the gradient blocks.

    ``obs`` (indices of observed items) and ``n_items`` allow results to
    be scattered back to full-length item vectors; both default to the
    complete-data case.
    """

    resid: np.ndarray      # (p,)
    inv_Sigma: np.ndarray  # (p, p)
    Qsr: np.ndarray        # (p, p)
    obs: np.ndarray | None = None
    n_items: int | None = None

    @classmethod
    def build(cls, y_obs: np.ndarray, m: ImpliedMoments, obs=None, n_items=None):
        r = np.asarray(y_obs, dtype=float) - m.mu
        s = m.inv_Sigma @ r
        return cls(resid=r, inv_Sigma=m.inv_Sigma, Qsr=np.outer(s, s) - m.inv_Sigma,
                   obs=None if obs is None else np.asarray(obs, dtype=int),
                   n_items=n_items)

    @property
    def swept(self) -> np.ndarray:
        """inv_Sigma @ resid."""
        return self.inv_Sigma @ self.resid

    def expand(self, values: np.ndarray) -> np.ndarray:
        """Scatter an observed-coordinate vector to full item length."""
        if self.obs is None:
            return values
        out = np.zeros(self.n_items if self.n_items is not None else values.size)
        out[self.obs] = values
        return out


def grad_nu(ws: GradWorkspace) -> np.ndarray:
    """d loglik / d nu: the swept residual, zero at missing coordinates."""
    return ws.expand(ws.swept)


def grad_lambda(i: int, f: int, ws: GradWorkspace, lam: np.ndarray, alpha: np.ndarray,
                Phi: np.ndarray) -> float:
    """d loglik / d lambda[i, f] for an observed item row ``i``.

    Mean part (Sinv r)_i * alpha_f plus covariance part (Qsr v)_i with
    v the f-th column of Lambda Phi.
    """
    v = lam @ Phi[:, f]
    return float(ws.swept[i] * alpha[f] + ws.Qsr[i] @ v)


def grad_theta(i: int, ws: GradWorkspace, theta: np.ndarray) -> float:
    """d loglik / d log theta[i] = 0.5 * theta_i * Qsr[i, i]."""
    return float(0.5 * theta[i] * ws.Qsr[i, i])


def grad_alpha(ws: GradWorkspace, lam: np.ndarray) -> np.ndarray:
    """d loglik / d alpha = Lambda' Sinv r."""
    return lam.T @ ws.swept


def grad_phi_diag(m_idx: int, ws: GradWorkspace, lam: np.ndarray, Phi: np.ndarray) -> float:
    """d loglik / d log phi[m].

    dPhi/dlog phi_m = 0.5 (E_m Phi + Phi E_m), so the trace term
    0.5 tr(Qsr Lambda dPhi Lambda') collapses to 0.5 * (A Phi)[m, m]
    with A = Lambda' Qsr Lambda.
    """
    A = lam.T @ ws.Qsr @ lam
    return float(0.5 * (A @ Phi)[m_idx, m_idx])


def grad_gamma_fd(
    m_idx: int,
    pp: PersonParams,
    spec: ModelSpec,
    y_obs: np.ndarray,
    obs: np.ndarray | None = None,
    eps: float = GAMMA_FD_EPS,
) -> float:
    """Central finite difference of the person log-likelihood in gamma[m_idx].

    The step widens to eps * (1 + |gamma|) once |gamma| > 4, where the
    correlation maps flatten out. A positive-definiteness failure at a
    perturbed point retries with eps / 10 before giving up.
    """
    g0 = float(pp.gamma[m_idx])
    step = eps * (1.0 + abs(g0)) if abs(g0) > 4.0 else eps

    def ll_at(g):
        gamma = pp.gamma.copy()
        gamma[m_idx] = g
        pp2 = PersonParams(nu=pp.nu, lam=pp.lam, theta=pp.theta, alpha=pp.alpha,
                           phi_diag=pp.phi_diag, gamma=gamma)
        m = implied_moments(pp2, spec)
        if obs is not None:
            m = m.subset(obs)
        return person_loglik(y_obs, m)

    for attempt_eps in (step, step / 10.0):
        try:
            return (ll_at(g0 + attempt_eps) - ll_at(g0 - attempt_eps)) / (2.0 * attempt_eps)
        except NotPositiveDefiniteError:
            continue
    raise NotPositiveDefiniteError(
        f"correlation-gradient finite difference failed at gamma[{m_idx}]"
    )


def grad_delta(base_grad, x_j: float):
    """Moderation-coefficient gradient: covariate value times the base gradient."""
    return x_j * np.asarray(base_grad, dtype=float)


# ---- Batched engine ----

def _base_gradients(params: ParameterSet, data: Dataset, spec: ModelSpec,
                    gamma_eps: float = GAMMA_FD_EPS):
    """Per-person gradients w.r.t. every person-level parameter.

    Returns (total loglik, dict of arrays): "nu" (N,I), "lam" (N,I,M),
    "log_theta" (N,I), "alpha" (N,M), "log_phi" (N,M), "gamma" (N,M').
    Missing coordinates contribute zeros.
    """
    res, Phi, groups = _batch_moments(params, data, spec)
    N, I = data.n_persons, data.n_items
    M = spec.n_factors
    n_pairs = res["gamma"].shape[1]
    g_nu = np.zeros((N, I))
    g_lam = np.zeros((N, I, M))
    g_th = np.zeros((N, I))
    g_al = np.zeros((N, M))
    g_ph = np.zeros((N, M))
    g_ga = np.zeros((N, n_pairs))
    total = 0.0

    for g in groups:
        total += float(g.loglik.sum())
        rows, obs = g.rows, g.obs
        Phi_g = Phi[rows]
        alpha_g = res["alpha"][rows]
        s = g.swept                                   # (n, p)
        Qsr = np.einsum("ni,nj->nij", s, s) - g.Sinv  # (n, p, p)

        g_nu[np.ix_(rows, obs)] = s
        lamPhi = g.lam @ Phi_g
        g_lam[np.ix_(rows, obs)] = (
            s[:, :, None] * alpha_g[:, None, :] + np.einsum("nij,njm->nim", Qsr, lamPhi)
        )
        diagQ = np.diagonal(Qsr, axis1=-2, axis2=-1)
        g_th[np.ix_(rows, obs)] = 0.5 * g.theta * diagQ
        g_al[rows] = np.einsum("nim,ni->nm", g.lam, s)
        A = np.einsum("nim,nij,njk->nmk", g.lam, Qsr, g.lam)
        g_ph[rows] = 0.5 * np.diagonal(A @ Phi_g, axis1=-2, axis2=-1)

        if n_pairs:
            gamma_g = res["gamma"][rows]
            phi_g = res["phi_diag"][rows]
            steps = np.where(np.abs(gamma_g) > 4.0,
                             gamma_eps * (1.0 + np.abs(gamma_g)), gamma_eps)
            for m_idx in range(n_pairs):
                step = steps[:, m_idx]
                g_ga[rows, m_idx] = _gamma_fd_column(
                    gamma_g, phi_g, m_idx, step, g, spec, rows
                )
    return total, {"nu": g_nu, "lam": g_lam, "log_theta": g_th,
                   "alpha": g_al, "log_phi": g_ph, "gamma": g_ga}


def _gamma_fd_column(gamma_g, phi_g, m_idx, step, g, spec, rows):
    """Batched central FD over one gamma coordinate for a pattern group."""
    for attempt in range(2):
        try:
            sides = []
            for sign in (+1.0, -1.0):
                gam = gamma_g.copy()
                gam[:, m_idx] += sign * step
                Phi_s, _, _ = factor_cov_batch(gam, phi_g, spec.corr_param)
                Sigma_s, _ = _group_sigma(g.lam, Phi_s, g.theta)
                Sinv_s, logdet_s = _invert_spd(Sigma_s, rows)
                _, ll = _loglik_from_parts(g.resid, Sinv_s, logdet_s)
                sides.append(ll)
            return (sides[0] - sides[1]) / (2.0 * step)
        except NotPositiveDefiniteError:
            if attempt == 1:
                raise
            step = step / 10.0


def person_scores(params: ParameterSet, data: Dataset, spec: ModelSpec,
                  gamma_eps: float = GAMMA_FD_EPS):
    """Per-person gradient of the unpenalized log-likelihood, packed.

    Returns (total loglik, scores) with scores of shape
    (n_persons, n_free); row sums of ``scores`` give the total gradient.
    """
    total, base = _base_gradients(params, data, spec, gamma_eps)
    N = data.n_persons
    X = data.X.rows
    flat = {
        "nu0": base["nu"], "lambda0": base["lam"].reshape(N, -1),
        "log_theta0": base["log_theta"], "alpha0": base["alpha"],
        "log_phi0": base["log_phi"], "gamma0": base["gamma"],
    }
    cols = []
    for name, mask in spec._blocks:
        if name in flat:
            block = flat[name].reshape(N, -1)
            cols.append(block[:, mask.ravel()])
        else:
            source = {"delta_nu": "nu0", "delta_lambda": "lambda0",
                      "delta_theta": "log_theta0", "delta_alpha": "alpha0",
                      "delta_phi": "log_phi0", "delta_gamma": "gamma0"}[name]
            base_block = flat[source].reshape(N, -1)
            outer = base_block[:, :, None] * X[:, None, :]
            cols.append(outer.reshape(N, -1)[:, mask.ravel()])
    return total, np.concatenate(cols, axis=1)


def full_gradient(
    params: ParameterSet | np.ndarray,
    data: Dataset,
    spec: ModelSpec,
    cfg: PenaltyConfig | None = None,
    gamma_eps: float = GAMMA_FD_EPS,
) -> np.ndarray:
    """Gradient of the composite objective w.r.t. the packed vector."""
    _, grad, _, _ = value_and_gradient(params, data, spec, cfg, gamma_eps)
    return grad


def value_and_gradient(
    params: ParameterSet | np.ndarray,
    data: Dataset,
    spec: ModelSpec,
    cfg: PenaltyConfig | None = None,
    gamma_eps: float = GAMMA_FD_EPS,
):
    """Composite objective and its gradient in one pass.

    Returns (objective, gradient, loglik, penalty). With no penalty
    config (or kind "none") the objective is the plain log-likelihood.
    """
    if not isinstance(params, ParameterSet):
        packed = np.asarray(params, dtype=float)
        params = unpack(packed, spec)
    else:
        packed = pack(params, spec)

    total, scores = person_scores(params, data, spec, gamma_eps)
    grad = scores.sum(axis=0)
    w0 = 0.0 if cfg is None else cfg.w0
    pen = 0.0
    if cfg is not None and cfg.kind != "none":
        pen = penalty_value(packed[spec.delta_slice], cfg)
    obj = (1.0 - w0) * total - w0 * pen
    grad = (1.0 - w0) * grad
    if cfg is not None and cfg.kind != "none" and w0 > 0.0:
        grad[spec.delta_slice] -= w0 * penalty_gradient(packed[spec.delta_slice], cfg)
    return obj, grad, total, pen
