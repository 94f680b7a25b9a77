"""Quasi-Newton estimation, numerical Hessians, sandwich standard errors.

The composite objective ``(1 - w0) * loglik - w0 * penalty`` is maximized
with scipy's L-BFGS-B (limited-memory quasi-Newton with a strong-Wolfe
line search) using the analytic gradient, followed when needed by a few
Newton steps on a finite-difference Hessian so the gradient tolerance is
actually met at likelihood scales that grow with the sample size.

Standard errors use the sandwich H^{-1} B H^{-1} with H the numerical
Hessian of the *unpenalized* log-likelihood and B the sum of per-person
score outer products.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .gradients import full_gradient, person_scores, value_and_gradient
from .likelihood import Dataset, NotPositiveDefiniteError
from .model import ModelSpec, ParameterSet, pack, unpack, validate_parameters
from .penalty import PenaltyConfig

__all__ = [
    "FitConfig",
    "FitResult",
    "default_start",
    "fit",
    "fd_hessian",
    "numerical_hessian",
    "sandwich_se",
    "penalty_path",
    "active_delta_count",
]

_EPS = np.finfo(float).eps


@dataclass
class FitConfig:
    """Optimizer settings.

    ``grad_tol`` is an infinity-norm tolerance on the composite-objective
    gradient; ``obj_rel_tol`` a relative objective-change stopping rule.
    ``n_starts`` > 1 adds jittered restarts (the first start is not
    jittered). ``polish`` enables the Newton clean-up stage; ``compute_se``
    controls whether sandwich standard errors are produced.
    """

    max_iter: int = 500
    grad_tol: float = 1e-5
    obj_rel_tol: float = 1e-8
    n_starts: int = 1
    start_jitter: float = 0.1
    seed: int = 0
    compute_se: bool = True
    polish: bool = True

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if self.grad_tol <= 0 or self.obj_rel_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class FitResult:
    """Estimates plus convergence and uncertainty diagnostics.

    ``converged`` is True only when the gradient infinity norm at the
    solution is at most ``grad_tol``. ``std_errors`` aligns with the
    packed parameter vector; ``se_caveats`` flags penalized coordinates
    shrunk into near-ties whose SEs should not be taken at face value.
    """

    params_hat: ParameterSet
    packed: np.ndarray
    loglik: float
    penalty: float
    penalized_obj: float
    converged: bool
    n_iter: int
    grad_norm: float
    std_errors: np.ndarray | None = None
    se_caveats: np.ndarray | None = None
    per_start: list[dict] = field(default_factory=list)
    w0: float = 0.0
    bic: float | None = None
    n_active_deltas: int | None = None
    error: str | None = None


def default_start(data: Dataset, spec: ModelSpec) -> ParameterSet:
    """Data-driven starting values.

    Item means seed the intercepts, half the item variance seeds the
    residual variance, free loadings start at 0.5, everything else at 0.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-nan columns
        nu0 = np.nanmean(data.Y, axis=0)
        v = np.nanvar(data.Y, axis=0)
    nu0 = np.where(np.isfinite(nu0), nu0, 0.0)
    v = np.where(np.isfinite(v) & (v > 1e-6), v, 1.0)
    pat = spec.loading_pattern
    base = ParameterSet.zeros(spec)
    return replace(
        base,
        nu0=nu0,
        log_theta0=np.log(0.5 * v),
        lambda0=np.where(np.isnan(pat), 0.5, pat),
    )


def _objective(data, spec, cfg):
    def fun(v):
        try:
            obj, grad, _, _ = value_and_gradient(v, data, spec, cfg)
        except NotPositiveDefiniteError:
            # Infeasible excursions during a line search: a huge value
            # makes the optimizer backtrack.
            return 1e12, np.zeros_like(v)
        return -obj, -grad
    return fun


def _newton_polish(x, data, spec, cfg, grad_tol, max_steps=3, fd_step=1e-5):
    """Finish with Newton steps on an FD Hessian when L-BFGS stalls early."""
    obj, grad, _, _ = value_and_gradient(x, data, spec, cfg)
    steps = 0
    for _ in range(max_steps):
        gnorm = np.abs(grad).max(initial=0.0)
        if gnorm <= grad_tol:
            break
        try:
            H = fd_hessian(lambda v: full_gradient(v, data, spec, cfg), x, fd_step)
            direction = np.linalg.solve(H, -grad)
        except (np.linalg.LinAlgError, NotPositiveDefiniteError):
            break
        t, accepted = 1.0, False
        for _ in range(12):
            x_new = x + t * direction
            try:
                obj_new, grad_new, _, _ = value_and_gradient(x_new, data, spec, cfg)
            except NotPositiveDefiniteError:
                t *= 0.5
                continue
            better_obj = obj_new > obj - 1e-12 * (1.0 + abs(obj))
            if better_obj and np.abs(grad_new).max(initial=0.0) < gnorm:
                x, obj, grad = x_new, obj_new, grad_new
                accepted = True
                break
            t *= 0.5
        steps += 1
        if not accepted:
            break
    return x, steps


def fit(
    data: Dataset,
    spec: ModelSpec,
    pen_cfg: PenaltyConfig | None = None,
    fit_cfg: FitConfig | None = None,
    start: ParameterSet | None = None,
) -> FitResult:
    """Maximize the composite objective for one model and dataset."""
    fit_cfg = fit_cfg or FitConfig()
    if pen_cfg is not None and pen_cfg.kind != "none":
        pen_cfg.check_coverage(spec.n_delta_free)

    if start is not None:
        validate_parameters(start, spec)
    base_start = pack(start if start is not None else default_start(data, spec), spec)
    rng = np.random.default_rng(fit_cfg.seed)
    fun = _objective(data, spec, pen_cfg)

    best = None
    per_start = []
    for k in range(fit_cfg.n_starts):
        x0 = base_start.copy()
        if k > 0:
            x0 = x0 + fit_cfg.start_jitter * rng.standard_normal(x0.size)
        # A start inside the infeasible region is re-jittered a few times.
        for attempt in range(5):
            try:
                value_and_gradient(x0, data, spec, pen_cfg)
                break
            except NotPositiveDefiniteError:
                if attempt == 4:
                    raise
                x0 = base_start + fit_cfg.start_jitter * rng.standard_normal(x0.size)

        x, nit = x0, 0
        # Second round tightens the objective-change rule when the first
        # stops before reaching the gradient tolerance.
        for round_ftol in (fit_cfg.obj_rel_tol, 10.0 * _EPS):
            res = minimize(
                fun, x, jac=True, method="L-BFGS-B",
                options={"maxiter": max(fit_cfg.max_iter - nit, 1),
                         "ftol": round_ftol, "gtol": fit_cfg.grad_tol,
                         "maxls": 50},
            )
            x, nit = res.x, nit + int(res.nit)
            gnorm = np.abs(full_gradient(x, data, spec, pen_cfg)).max(initial=0.0)
            if gnorm <= fit_cfg.grad_tol or nit >= fit_cfg.max_iter:
                break
        if fit_cfg.polish and gnorm > fit_cfg.grad_tol:
            x, extra = _newton_polish(x, data, spec, pen_cfg, fit_cfg.grad_tol)
            nit += extra

        obj, grad, ll, pen = value_and_gradient(x, data, spec, pen_cfg)
        gnorm = float(np.abs(grad).max(initial=0.0))
        record = {"start": k, "objective": float(obj), "n_iter": nit,
                  "grad_norm": gnorm, "converged": gnorm <= fit_cfg.grad_tol}
        per_start.append(record)
        if best is None or obj > best["obj"]:
            best = {"x": x, "obj": obj, "ll": ll, "pen": pen,
                    "gnorm": gnorm, "nit": nit}

    params_hat = unpack(best["x"], spec)
    result = FitResult(
        params_hat=params_hat,
        packed=best["x"],
        loglik=float(best["ll"]),
        penalty=float(best["pen"]),
        penalized_obj=float(best["obj"]),
        converged=bool(best["gnorm"] <= fit_cfg.grad_tol),
        n_iter=int(best["nit"]),
        grad_norm=float(best["gnorm"]),
        per_start=per_start,
        w0=0.0 if pen_cfg is None else pen_cfg.w0,
    )
    if fit_cfg.compute_se:
        H = numerical_hessian(params_hat, data, spec, None)
        _, scores = person_scores(params_hat, data, spec)
        result.std_errors = sandwich_se(H, scores)
        result.se_caveats = _shrinkage_caveats(best["x"], spec, pen_cfg)
    return result


def _shrinkage_caveats(packed, spec, pen_cfg, tie_tol=0.01):
    """Flag penalized coordinates sitting in near-ties under an active penalty."""
    caveats = np.zeros(packed.size, dtype=bool)
    if pen_cfg is None or pen_cfg.kind == "none" or pen_cfg.w0 == 0.0:
        return caveats
    theta1 = packed[spec.delta_slice]
    offset = spec.delta_slice.start
    for idx in pen_cfg.blocks:
        v = theta1[idx]
        if v.size < 2:
            continue
        diff = np.abs(v[:, None] - v[None, :])
        np.fill_diagonal(diff, np.inf)
        near = diff.min(axis=1) < tie_tol
        caveats[offset + idx[near]] = True
    return caveats


def fd_hessian(grad_fn, x0: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Symmetrized central finite differences of a gradient function."""
    x0 = np.asarray(x0, dtype=float)
    K = x0.size
    H = np.empty((K, K))
    for j in range(K):
        h = step * (1.0 + abs(x0[j]))
        e = np.zeros(K)
        e[j] = h
        H[:, j] = (grad_fn(x0 + e) - grad_fn(x0 - e)) / (2.0 * h)
    return 0.5 * (H + H.T)


def numerical_hessian(
    params_hat: ParameterSet | np.ndarray,
    data: Dataset,
    spec: ModelSpec,
    pen_cfg: PenaltyConfig | None = None,
    step: float = 1e-5,
) -> np.ndarray:
    """FD Hessian of the composite objective at the packed estimates.

    At a maximum this should be negative definite; if it is not, a
    warning with the eigenvalue range is emitted and the matrix returned
    as-is.
    """
    x0 = params_hat if not isinstance(params_hat, ParameterSet) else pack(params_hat, spec)
    H = fd_hessian(lambda v: full_gradient(v, data, spec, pen_cfg), np.asarray(x0), step)
    eigs = np.linalg.eigvalsh(H)
    if eigs.max(initial=-np.inf) >= 0.0:
        warnings.warn(
            f"hessian is not negative definite at the supplied point "
            f"(eigenvalue range [{eigs.min():.3g}, {eigs.max():.3g}])",
            RuntimeWarning,
            stacklevel=2,
        )
    return H


def sandwich_se(H: np.ndarray, person_grads: np.ndarray) -> np.ndarray:
    """Robust standard errors sqrt(diag(H^{-1} B H^{-1})), B = sum g g'.

    Sign convention of H does not matter (the two inverses cancel it).
    When H is numerically singular, coordinates touching its null space
    get NaN standard errors; the rest use the pseudo-inverse.
    """
    H = np.asarray(H, dtype=float)
    G = np.asarray(person_grads, dtype=float)
    B = G.T @ G
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    tol = np.abs(w).max(initial=0.0) * 1e-12
    null = np.abs(w) <= tol
    if null.any():
        inv_w = np.where(null, 0.0, 1.0 / np.where(null, 1.0, w))
        Hinv = (V * inv_w) @ V.T
        cov = Hinv @ B @ Hinv
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        affected = (np.abs(V[:, null]) > 1e-8).any(axis=1)
        se[affected] = np.nan
        return se
    Hinv = (V * (1.0 / w)) @ V.T
    cov = Hinv @ B @ Hinv
    return np.sqrt(np.clip(np.diag(cov), 0.0, None))


def active_delta_count(packed: np.ndarray, spec: ModelSpec, threshold: float = 0.01) -> int:
    """Number of moderation parameters exceeding the zero threshold."""
    return int((np.abs(np.asarray(packed)[spec.delta_slice]) > threshold).sum())


def penalty_path(
    data: Dataset,
    spec: ModelSpec,
    pen_cfg: PenaltyConfig,
    w0_grid,
    fit_cfg: FitConfig | None = None,
    zero_threshold: float = 0.01,
) -> list[FitResult]:
    """Fit a grid of penalty weights with warm starts.

    Each returned FitResult carries its ``w0``, a BIC computed from the
    unpenalized log-likelihood with the count of active (above-threshold)
    moderation parameters plus baseline parameters, and the active count.
    Failures at a grid point are recorded (``error`` set) and the path
    continues from the last successful estimate.
    """
    w0_grid = [float(w) for w in w0_grid]
    for w in w0_grid:
        if not 0.0 <= w < 1.0:
            raise ValueError(f"w0 values must lie in [0, 1); got {w}")
    fit_cfg = fit_cfg or FitConfig()
    path_cfg = replace(fit_cfg, compute_se=False)
    results: list[FitResult] = []
    warm: ParameterSet | None = None
    for w in w0_grid:
        cfg_w = replace(pen_cfg, w0=w)
        try:
            res = fit(data, spec, cfg_w, path_cfg, start=warm)
        except (NotPositiveDefiniteError, np.linalg.LinAlgError, ValueError) as err:
            stub = warm if warm is not None else default_start(data, spec)
            res = FitResult(
                params_hat=stub, packed=pack(stub, spec), loglik=np.nan,
                penalty=np.nan, penalized_obj=np.nan, converged=False,
                n_iter=0, grad_norm=np.nan, w0=w, error=str(err),
            )
            results.append(res)
            continue
        res.n_active_deltas = active_delta_count(res.packed, spec, zero_threshold)
        k_eff = spec.n_baseline_free + res.n_active_deltas
        res.bic = float(-2.0 * res.loglik + k_eff * np.log(data.n_persons))
        results.append(res)
        warm = res.params_hat
    return results
