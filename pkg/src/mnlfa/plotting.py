"""Figure rendering for the CLI report paths (written next to the CSVs)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["save_curves_figure", "save_profile_figure", "save_estimates_figure"]


def save_curves_figure(table, path):
    """Line plot of each factor correlation against the moderator grid."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    cols = [c for c in table.columns if c != "x"]
    for col in cols:
        label = col.replace("cor_", "").replace("_", " ~ ")
        ax.plot(table["x"], table[col], marker="", lw=1.8, label=label)
    ax.set_xlabel("moderator")
    ax.set_ylabel("factor correlation")
    ax.set_ylim(-1.05, 1.05)
    ax.axhline(0.0, color="0.8", lw=0.8, zorder=0)
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_profile_figure(w0_values, delta_matrix, delta_names, bic, n_active, path):
    """Penalty-path figure: moderation-parameter traces plus BIC/active count."""
    fig, (ax1, ax2) = plt.subplots(
        2, 1, figsize=(6.5, 6.0), sharex=True, height_ratios=[2, 1]
    )
    delta_matrix = np.asarray(delta_matrix)
    for j in range(delta_matrix.shape[1]):
        label = delta_names[j] if delta_matrix.shape[1] <= 12 else None
        ax1.plot(w0_values, delta_matrix[:, j], lw=1.4, label=label)
    ax1.axhline(0.0, color="0.8", lw=0.8, zorder=0)
    ax1.set_ylabel("moderation estimate")
    if delta_matrix.shape[1] <= 12:
        ax1.legend(frameon=False, fontsize=8)
    ax2.plot(w0_values, bic, "o-", color="k", lw=1.2, label="BIC")
    ax2.set_ylabel("BIC")
    ax2.set_xlabel("penalty weight w0")
    ax3 = ax2.twinx()
    ax3.plot(w0_values, n_active, "s--", color="tab:red", lw=1.0, label="active")
    ax3.set_ylabel("active moderation params", color="tab:red")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_estimates_figure(table, path):
    """Dot-and-interval plot of estimates with approximate 95% intervals."""
    est = table["estimate"].to_numpy(dtype=float)
    se = table["std_error"].to_numpy(dtype=float)
    k = len(table)
    fig_h = max(3.0, 0.22 * k + 1.2)
    fig, ax = plt.subplots(figsize=(6.5, fig_h))
    y = np.arange(k)[::-1]
    ok = np.isfinite(se)
    ax.errorbar(est[ok], y[ok], xerr=1.96 * se[ok], fmt="o", ms=3.5,
                color="tab:blue", ecolor="0.6", elinewidth=1.0, capsize=2)
    if (~ok).any():
        ax.plot(est[~ok], y[~ok], "o", ms=3.5, color="tab:gray")
    ax.axvline(0.0, color="0.85", lw=0.8, zorder=0)
    ax.set_yticks(y)
    ax.set_yticklabels(table["parameter"], fontsize=7)
    ax.set_xlabel("estimate (95% interval)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
