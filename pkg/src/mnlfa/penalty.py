"""Pairwise-difference penalties over moderation parameters.

Penalties act on the moderation (delta) segment of the packed parameter
vector, partitioned into blocks. Within a block the penalty sums over
*ordered* pairs i != j, so every unordered pair is counted twice:

- ridge:      sum (v_i - v_j)^2 / nu
- lasso:      sum sqrt((v_i - v_j)^2 + eps) / nu
- alignment:  sum ((v_i - v_j)^2 + eps)^(1/4) / nu

The composite objective maximized by the estimator is
``(1 - w0) * loglik - w0 * penalty``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PENALTY_KINDS",
    "PenaltyConfig",
    "penalty_value",
    "penalty_gradient",
    "composite_objective",
]

PENALTY_KINDS = ("none", "ridge", "lasso", "alignment")


@dataclass
class PenaltyConfig:
    """Penalty kind, weight, scale, smoothing constant and blocks.

    ``blocks`` holds index arrays into the moderation segment of the
    packed vector (see ``ModelSpec.delta_slice``); they must be disjoint.
    Blocks with fewer than two members contribute nothing.
    """

    kind: str = "none"
    w0: float = 0.0
    nu_scale: float = 1.0
    epsilon: float = 1e-8
    blocks: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}; expected {PENALTY_KINDS}")
        if not (0.0 <= self.w0 < 1.0):
            raise ValueError(f"w0 must lie in [0, 1), got {self.w0}")
        if self.nu_scale <= 0.0:
            raise ValueError(f"nu_scale must be positive, got {self.nu_scale}")
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        self.blocks = [np.asarray(b, dtype=int).reshape(-1) for b in self.blocks]
        if self.blocks:
            combined = np.concatenate(self.blocks)
            if combined.size != np.unique(combined).size:
                raise ValueError("penalty blocks must be disjoint")

    def check_coverage(self, n_delta_free: int):
        """Verify the blocks exactly cover the moderation segment."""
        combined = (
            np.sort(np.concatenate(self.blocks)) if self.blocks else np.empty(0, dtype=int)
        )
        if not np.array_equal(combined, np.arange(n_delta_free)):
            raise ValueError(
                f"penalty blocks must cover all {n_delta_free} moderation parameters "
                f"exactly once"
            )


def penalty_value(theta1: np.ndarray, cfg: PenaltyConfig) -> float:
    """Penalty evaluated on the moderation segment of the packed vector."""
    if cfg.kind == "none":
        return 0.0
    theta1 = np.asarray(theta1, dtype=float)
    total = 0.0
    for idx in cfg.blocks:
        v = theta1[idx]
        k = v.size
        if k < 2:
            continue
        diff = v[:, None] - v[None, :]
        if cfg.kind == "ridge":
            total += float((diff * diff).sum())
        elif cfg.kind == "lasso":
            total += float(np.sqrt(diff * diff + cfg.epsilon).sum()) - k * np.sqrt(cfg.epsilon)
        else:  # alignment
            total += float(((diff * diff + cfg.epsilon) ** 0.25).sum()) - k * cfg.epsilon ** 0.25
    return total / cfg.nu_scale


def penalty_gradient(theta1: np.ndarray, cfg: PenaltyConfig) -> np.ndarray:
    """Gradient of :func:`penalty_value` with respect to the moderation segment."""
    theta1 = np.asarray(theta1, dtype=float)
    grad = np.zeros_like(theta1)
    if cfg.kind == "none":
        return grad
    for idx in cfg.blocks:
        v = theta1[idx]
        if v.size < 2:
            continue
        diff = v[:, None] - v[None, :]
        if cfg.kind == "ridge":
            g = 4.0 * diff.sum(axis=1)
        elif cfg.kind == "lasso":
            g = 2.0 * (diff / np.sqrt(diff * diff + cfg.epsilon)).sum(axis=1)
        else:  # alignment
            g = (diff / (diff * diff + cfg.epsilon) ** 0.75).sum(axis=1)
        grad[idx] = g / cfg.nu_scale
    return grad


def composite_objective(loglik: float, penalty: float, w0: float) -> float:
    """Weighted combination ``(1 - w0) * loglik - w0 * penalty``."""
    return (1.0 - w0) * loglik - w0 * penalty
