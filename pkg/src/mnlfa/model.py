"""Model specification, parameter containers, and person-level resolution.

The measurement model for person ``n`` with covariate vector ``x`` is ::

    y_n = nu_n + Lambda_n @ eta_n + eps_n,   eps_n ~ N(0, diag(theta_n))
    eta_n ~ N(alpha_n, Phi_n)

where every parameter is an affine (or log-affine) function of the
covariates::

    nu_n     = nu0 + delta_nu @ x
    Lambda_n = Lambda0 + delta_lambda @ x
    theta_n  = exp(log_theta0 + delta_theta @ x)
    alpha_n  = alpha0 + delta_alpha @ x
    phi_n    = exp(log_phi0 + delta_phi @ x)
    gamma_n  = gamma0 + delta_gamma @ x

``gamma_n`` collects unconstrained correlation parameters; the map to a
valid factor covariance matrix lives in :mod:`mnlfa.corrstruct`.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PARTIAL_CORRELATION",
    "HYPERSPHERE",
    "STANDARDIZED_BASELINE",
    "ANCHOR_LOADING",
    "DELTA_FAMILIES",
    "ModelSpec",
    "ParameterSet",
    "PersonParams",
    "DesignMatrix",
    "n_corr_params",
    "corr_pairs",
    "empty_moderation",
    "pack",
    "unpack",
    "resolve_person",
    "resolve_population",
    "validate_parameters",
]

PARTIAL_CORRELATION = "partial_correlation"
HYPERSPHERE = "hypersphere"
_CORR_PARAMS = (PARTIAL_CORRELATION, HYPERSPHERE)

STANDARDIZED_BASELINE = "standardized_baseline"
ANCHOR_LOADING = "anchor_loading"
_IDENTIFICATIONS = (STANDARDIZED_BASELINE, ANCHOR_LOADING)

# Moderation families, in packing order.
DELTA_FAMILIES = ("nu", "lambda", "theta", "alpha", "phi", "gamma")


def n_corr_params(n_factors: int) -> int:
    """Number of free correlation parameters for ``n_factors`` factors."""
    return n_factors * (n_factors - 1) // 2


def corr_pairs(n_factors: int) -> list[tuple[int, int]]:
    """Lower-triangle (row, col) index pairs in row-major order.

    The k-th entry of a correlation-parameter vector refers to the k-th
    pair returned here: (1,0), (2,0), (2,1), (3,0), ...
    """
    return [(i, j) for i in range(1, n_factors) for j in range(i)]


def empty_moderation(n_items: int, n_factors: int, n_covariates: int) -> dict[str, np.ndarray]:
    """All-off moderation masks for every parameter family."""
    m = n_corr_params(n_factors)
    return {
        "nu": np.zeros((n_items, n_covariates), dtype=bool),
        "lambda": np.zeros((n_items, n_factors, n_covariates), dtype=bool),
        "theta": np.zeros((n_items, n_covariates), dtype=bool),
        "alpha": np.zeros((n_factors, n_covariates), dtype=bool),
        "phi": np.zeros((n_factors, n_covariates), dtype=bool),
        "gamma": np.zeros((m, n_covariates), dtype=bool),
    }


class ModelSpec:
    """Dimensions, loading pattern, moderation pattern and identification.

    Parameters
    ----------
    n_items : int
        Number of observed indicators.
    n_factors : int
        Number of latent factors.
    n_covariates : int
        Number of person covariates available as moderators.
    loading_pattern : ndarray of shape (n_items, n_factors), optional
        ``nan`` marks a freely estimated loading, any number fixes the
        loading to that value. Defaults to all free.
    moderated : dict of boolean ndarrays, optional
        Masks keyed by family name ("nu", "lambda", "theta", "alpha",
        "phi", "gamma") selecting which (parameter, covariate) pairs
        carry a moderation effect. Shapes: (I,P), (I,M,P), (I,P), (M,P),
        (M,P), (M(M-1)/2, P). Missing families default to all-off.
    corr_param : str
        "partial_correlation" or "hypersphere".
    identification : str
        "standardized_baseline" fixes alpha0 = 0 and log_phi0 = 0 with
        all patterned loadings free; "anchor_loading" requires exactly
        one loading per factor fixed to 1 (whose moderation must be off)
        and frees alpha0 and log_phi0.
    """

    def __init__(
        self,
        n_items: int,
        n_factors: int,
        n_covariates: int,
        loading_pattern: np.ndarray | None = None,
        moderated: dict[str, np.ndarray] | None = None,
        corr_param: str = PARTIAL_CORRELATION,
        identification: str = STANDARDIZED_BASELINE,
    ):
        if n_items < 1 or n_factors < 1 or n_covariates < 0:
            raise ValueError("n_items and n_factors must be >= 1, n_covariates >= 0")
        if corr_param not in _CORR_PARAMS:
            raise ValueError(f"unknown corr_param {corr_param!r}; expected one of {_CORR_PARAMS}")
        if identification not in _IDENTIFICATIONS:
            raise ValueError(
                f"unknown identification {identification!r}; expected one of {_IDENTIFICATIONS}"
            )

        self.n_items = int(n_items)
        self.n_factors = int(n_factors)
        self.n_covariates = int(n_covariates)
        self.corr_param = corr_param
        self.identification = identification

        if loading_pattern is None:
            loading_pattern = np.full((self.n_items, self.n_factors), np.nan)
        loading_pattern = np.array(loading_pattern, dtype=float)
        if loading_pattern.shape != (self.n_items, self.n_factors):
            raise ValueError(
                f"loading_pattern has shape {loading_pattern.shape}, "
                f"expected {(self.n_items, self.n_factors)}"
            )
        loading_pattern.setflags(write=False)
        self.loading_pattern = loading_pattern

        masks = empty_moderation(self.n_items, self.n_factors, self.n_covariates)
        if moderated:
            for fam, mask in moderated.items():
                if fam not in masks:
                    raise ValueError(f"unknown moderation family {fam!r}")
                mask = np.array(mask, dtype=bool)
                if mask.shape != masks[fam].shape:
                    raise ValueError(
                        f"moderation mask for {fam!r} has shape {mask.shape}, "
                        f"expected {masks[fam].shape}"
                    )
                masks[fam] = mask
        for mask in masks.values():
            mask.setflags(write=False)
        self.moderated = masks

        self._validate()
        self._build_layout()

    # ---- Validation ----

    def _validate(self):
        pat = self.loading_pattern
        free = np.isnan(pat)
        for m in range(self.n_factors):
            col_free = free[:, m]
            col_nonzero = ~col_free & (pat[:, m] != 0)
            if not (col_free.any() or col_nonzero.any()):
                raise ValueError(f"factor {m} has no item with a free or nonzero fixed loading")

        if self.identification == ANCHOR_LOADING:
            for m in range(self.n_factors):
                anchors = np.flatnonzero(~free[:, m] & (pat[:, m] == 1.0))
                if anchors.size != 1:
                    raise ValueError(
                        f"anchor_loading identification requires exactly one loading fixed "
                        f"to 1 for factor {m}; found {anchors.size}"
                    )
                if self.moderated["lambda"][anchors[0], m].any():
                    raise ValueError(
                        f"the anchor loading (item {anchors[0]}, factor {m}) cannot be moderated"
                    )

        # Moderating a factor mean (variance) by some covariate leaves a flat
        # direction unless at least one of the factor's items keeps an
        # unmoderated intercept and loading (loading) for that covariate: the
        # factor-level shift can otherwise be absorbed item by item. Warn
        # rather than refuse, since a difference penalty can stand in for
        # anchor items.
        for m in range(self.n_factors):
            on_factor = np.flatnonzero(free[:, m] | (pat[:, m] != 0))
            lam_mod = self.moderated["lambda"][on_factor].any(axis=1)  # (items, P)
            for p in range(self.n_covariates):
                need_mean = self.moderated["alpha"][m, p]
                need_var = self.moderated["phi"][m, p]
                if need_mean and not (
                    ~self.moderated["nu"][on_factor, p] & ~lam_mod[:, p]
                ).any():
                    warnings.warn(
                        f"the mean of factor {m} is moderated by covariate {p} but "
                        f"every item of the factor has its intercept or loadings "
                        f"moderated by it too; the effect may be weakly identified",
                        UserWarning,
                        stacklevel=3,
                    )
                if need_var and not (~lam_mod[:, p]).any():
                    warnings.warn(
                        f"the variance of factor {m} is moderated by covariate {p} "
                        f"but every item of the factor has moderated loadings on "
                        f"it too; the effect may be weakly identified",
                        UserWarning,
                        stacklevel=3,
                    )

    # ---- Packing layout ----

    def _build_layout(self):
        free_loadings = np.isnan(self.loading_pattern)
        baseline_free = np.ones(self.n_factors, dtype=bool)
        if self.identification == STANDARDIZED_BASELINE:
            baseline_free = np.zeros(self.n_factors, dtype=bool)
        m = n_corr_params(self.n_factors)

        blocks: list[tuple[str, np.ndarray]] = [
            ("nu0", np.ones(self.n_items, dtype=bool)),
            ("lambda0", free_loadings),
            ("log_theta0", np.ones(self.n_items, dtype=bool)),
            ("alpha0", baseline_free),
            ("log_phi0", baseline_free.copy()),
            ("gamma0", np.ones(m, dtype=bool)),
            ("delta_nu", self.moderated["nu"]),
            ("delta_lambda", self.moderated["lambda"]),
            ("delta_theta", self.moderated["theta"]),
            ("delta_alpha", self.moderated["alpha"]),
            ("delta_phi", self.moderated["phi"]),
            ("delta_gamma", self.moderated["gamma"]),
        ]
        self._blocks = blocks
        counts = [int(mask.sum()) for _, mask in blocks]
        offsets = np.concatenate([[0], np.cumsum(counts)])
        self._slices = {
            name: slice(int(offsets[k]), int(offsets[k + 1]))
            for k, (name, _) in enumerate(blocks)
        }
        self.n_free = int(offsets[-1])
        self.n_baseline_free = int(offsets[6])
        self.n_delta_free = self.n_free - self.n_baseline_free

    def block_slice(self, name: str) -> slice:
        """Slice of the packed vector occupied by one parameter block."""
        return self._slices[name]

    @property
    def delta_slice(self) -> slice:
        """Slice of the packed vector holding all moderation parameters."""
        return slice(self.n_baseline_free, self.n_free)

    def coordinate_names(
        self,
        item_names: list[str] | None = None,
        factor_names: list[str] | None = None,
        covariate_names: list[str] | None = None,
    ) -> list[str]:
        """Human-readable name for every packed coordinate, in packing order."""
        items = item_names or [f"y{i + 1}" for i in range(self.n_items)]
        factors = factor_names or [f"f{m + 1}" for m in range(self.n_factors)]
        covs = covariate_names or [f"x{p + 1}" for p in range(self.n_covariates)]
        pairs = corr_pairs(self.n_factors)

        def base_labels(name):
            if name in ("nu0", "log_theta0"):
                return [f"[{it}]" for it in items]
            if name == "lambda0":
                return [f"[{it},{fa}]" for it in items for fa in factors]
            if name in ("alpha0", "log_phi0"):
                return [f"[{fa}]" for fa in factors]
            if name == "gamma0":
                return [f"[{factors[j]},{factors[i]}]" for i, j in pairs]
            raise KeyError(name)

        short = {"nu0": "nu", "lambda0": "lambda", "log_theta0": "log_theta",
                 "alpha0": "alpha", "log_phi0": "log_phi", "gamma0": "gamma"}
        names: list[str] = []
        for name, mask in self._blocks:
            if name in short:
                labels = base_labels(name)
                prefix = short[name]
                flat = mask.ravel()
                names.extend(prefix + lab for lab, keep in zip(labels, flat) if keep)
            else:
                base = name.replace("delta_", "")
                key = {"nu": "nu0", "lambda": "lambda0", "theta": "log_theta0",
                       "alpha": "alpha0", "gamma": "gamma0", "phi": "log_phi0"}[base]
                labels = base_labels(key)
                flat = mask.reshape(len(labels), self.n_covariates)
                for lab, row in zip(labels, flat):
                    for p in np.flatnonzero(row):
                        names.append(f"{name}{lab[:-1]},{covs[p]}]")
        return names

    def block_of_coordinate(self) -> list[str]:
        """Block name for every packed coordinate, in packing order."""
        out = []
        for name, mask in self._blocks:
            out.extend([name] * int(mask.sum()))
        return out

    def delta_penalty_blocks(self, grouping: str = "family_by_covariate") -> list[np.ndarray]:
        """Default penalty blocks as index arrays into the moderation segment.

        ``family_by_covariate`` groups the moderation parameters of one
        family that share a covariate; ``single`` lumps everything into
        one block. Empty groups are dropped.
        """
        if self.n_delta_free == 0:
            return []
        if grouping == "single":
            return [np.arange(self.n_delta_free)]
        if grouping != "family_by_covariate":
            raise ValueError(f"unknown penalty grouping {grouping!r}")
        blocks = []
        offset = 0
        for name, mask in self._blocks[6:]:
            k = int(mask.sum())
            if k:
                flat = mask.reshape(-1, self.n_covariates)
                cov_of_free = np.nonzero(flat)[1]  # covariate index per packed entry
                for p in range(self.n_covariates):
                    idx = offset + np.flatnonzero(cov_of_free == p)
                    if idx.size:
                        blocks.append(idx)
            offset += k
        return blocks


@dataclass(frozen=True)
class ParameterSet:
    """Baseline parameters plus moderation (delta) coefficient arrays.

    Arrays are copied and frozen at construction. Entries not selected
    by the spec (fixed loadings, masked-off deltas, fixed alpha0 and
    log_phi0 under standardized_baseline) are carried in the arrays but
    are not free parameters; see :func:`pack` / :func:`unpack`.
    """

    nu0: np.ndarray          # (I,)
    lambda0: np.ndarray      # (I, M)
    log_theta0: np.ndarray   # (I,)
    alpha0: np.ndarray       # (M,)
    log_phi0: np.ndarray     # (M,)
    gamma0: np.ndarray       # (M(M-1)/2,)
    delta_nu: np.ndarray     # (I, P)
    delta_lambda: np.ndarray  # (I, M, P)
    delta_theta: np.ndarray  # (I, P)
    delta_alpha: np.ndarray  # (M, P)
    delta_phi: np.ndarray    # (M, P)
    delta_gamma: np.ndarray  # (M(M-1)/2, P)

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "ParameterSet":
        """All-zero free parameters with fixed loadings filled from the pattern."""
        return unpack(np.zeros(spec.n_free), spec)

    def replace(self, **changes) -> "ParameterSet":
        """Copy with the given fields replaced."""
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class PersonParams:
    """Parameters resolved at one covariate vector (natural scale)."""

    nu: np.ndarray       # (I,)
    lam: np.ndarray      # (I, M)
    theta: np.ndarray    # (I,) residual variances
    alpha: np.ndarray    # (M,)
    phi_diag: np.ndarray  # (M,) factor variances
    gamma: np.ndarray    # (M(M-1)/2,) unconstrained correlation parameters


@dataclass(frozen=True)
class DesignMatrix:
    """Person covariates: one row per person, no missing entries."""

    rows: np.ndarray
    column_names: list[str] | None = None

    def __post_init__(self):
        rows = np.atleast_2d(np.array(self.rows, dtype=float))
        if not np.isfinite(rows).all():
            bad = np.flatnonzero(~np.isfinite(rows).all(axis=1))
            raise ValueError(f"covariates must be complete; offending rows {bad[:10].tolist()}")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        if self.column_names is None:
            object.__setattr__(
                self, "column_names", [f"x{p + 1}" for p in range(rows.shape[1])]
            )
        elif len(self.column_names) != rows.shape[1]:
            raise ValueError("column_names length does not match covariate count")

    @property
    def n_persons(self) -> int:
        return self.rows.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.rows.shape[1]


# ---- Packing ----

def _check_shapes(params: ParameterSet, spec: ModelSpec):
    m = n_corr_params(spec.n_factors)
    expected = {
        "nu0": (spec.n_items,),
        "lambda0": (spec.n_items, spec.n_factors),
        "log_theta0": (spec.n_items,),
        "alpha0": (spec.n_factors,),
        "log_phi0": (spec.n_factors,),
        "gamma0": (m,),
        "delta_nu": (spec.n_items, spec.n_covariates),
        "delta_lambda": (spec.n_items, spec.n_factors, spec.n_covariates),
        "delta_theta": (spec.n_items, spec.n_covariates),
        "delta_alpha": (spec.n_factors, spec.n_covariates),
        "delta_phi": (spec.n_factors, spec.n_covariates),
        "delta_gamma": (m, spec.n_covariates),
    }
    for name, shape in expected.items():
        got = getattr(params, name).shape
        if got != shape:
            raise ValueError(f"{name} has shape {got}, expected {shape}")


def pack(params: ParameterSet, spec: ModelSpec) -> np.ndarray:
    """Flatten the free parameters into a single vector.

    Order: nu0, free loadings, log_theta0, free alpha0, free log_phi0,
    gamma0, then the moderation families (nu, lambda, theta, alpha, phi,
    gamma), each row-major over (parameter, covariate).
    """
    _check_shapes(params, spec)
    return np.concatenate(
        [np.asarray(getattr(params, name))[mask] for name, mask in spec._blocks]
    )


def unpack(vec: np.ndarray, spec: ModelSpec) -> ParameterSet:
    """Inverse of :func:`pack`; fixed entries are filled from the spec."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (spec.n_free,):
        raise ValueError(f"packed vector has shape {vec.shape}, expected ({spec.n_free},)")
    pat = spec.loading_pattern
    m = n_corr_params(spec.n_factors)
    out = {
        "nu0": np.zeros(spec.n_items),
        "lambda0": np.where(np.isnan(pat), 0.0, pat),
        "log_theta0": np.zeros(spec.n_items),
        "alpha0": np.zeros(spec.n_factors),
        "log_phi0": np.zeros(spec.n_factors),
        "gamma0": np.zeros(m),
        "delta_nu": np.zeros((spec.n_items, spec.n_covariates)),
        "delta_lambda": np.zeros((spec.n_items, spec.n_factors, spec.n_covariates)),
        "delta_theta": np.zeros((spec.n_items, spec.n_covariates)),
        "delta_alpha": np.zeros((spec.n_factors, spec.n_covariates)),
        "delta_phi": np.zeros((spec.n_factors, spec.n_covariates)),
        "delta_gamma": np.zeros((m, spec.n_covariates)),
    }
    for name, mask in spec._blocks:
        out[name][mask] = vec[spec.block_slice(name)]
    return ParameterSet(**out)


def validate_parameters(params: ParameterSet, spec: ModelSpec, atol: float = 1e-12):
    """Check consistency of a ParameterSet with the spec's fixed/mask structure."""
    _check_shapes(params, spec)
    pat = spec.loading_pattern
    fixed = ~np.isnan(pat)
    if fixed.any() and not np.allclose(params.lambda0[fixed], pat[fixed], rtol=0, atol=atol):
        raise ValueError("fixed loadings in lambda0 do not equal their pattern values")
    for fam, attr in zip(DELTA_FAMILIES,
                         ("delta_nu", "delta_lambda", "delta_theta",
                          "delta_alpha", "delta_phi", "delta_gamma")):
        arr = getattr(params, attr)
        off = ~spec.moderated[fam]
        if off.any() and np.abs(arr[off]).max(initial=0.0) > atol:
            raise ValueError(f"{attr} has nonzero entries outside the moderation mask")
    if spec.identification == STANDARDIZED_BASELINE:
        if np.abs(params.alpha0).max(initial=0.0) > atol:
            raise ValueError("alpha0 must be zero under standardized_baseline identification")
        if np.abs(params.log_phi0).max(initial=0.0) > atol:
            raise ValueError("log_phi0 must be zero under standardized_baseline identification")


# ---- Resolution ----

def resolve_person(params: ParameterSet, x: np.ndarray) -> PersonParams:
    """Evaluate all person-level parameters at one covariate vector."""
    x = np.asarray(x, dtype=float).reshape(-1)
    return PersonParams(
        nu=params.nu0 + params.delta_nu @ x,
        lam=params.lambda0 + params.delta_lambda @ x,
        theta=np.exp(params.log_theta0 + params.delta_theta @ x),
        alpha=params.alpha0 + params.delta_alpha @ x,
        phi_diag=np.exp(params.log_phi0 + params.delta_phi @ x),
        gamma=params.gamma0 + params.delta_gamma @ x,
    )


def resolve_population(params: ParameterSet, X: np.ndarray) -> dict[str, np.ndarray]:
    """Vectorized :func:`resolve_person` over the rows of a design matrix.

    Returns arrays keyed "nu" (N,I), "lam" (N,I,M), "theta" (N,I),
    "alpha" (N,M), "phi_diag" (N,M), "gamma" (N, M(M-1)/2).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return {
        "nu": params.nu0[None, :] + X @ params.delta_nu.T,
        "lam": params.lambda0[None] + np.einsum("imp,np->nim", params.delta_lambda, X),
        "theta": np.exp(params.log_theta0[None, :] + X @ params.delta_theta.T),
        "alpha": params.alpha0[None, :] + X @ params.delta_alpha.T,
        "phi_diag": np.exp(params.log_phi0[None, :] + X @ params.delta_phi.T),
        "gamma": params.gamma0[None, :] + X @ params.delta_gamma.T,
    }
