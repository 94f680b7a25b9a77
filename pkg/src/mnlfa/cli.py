"""Command-line interface.

Subcommands: ``fit``, ``simulate``, ``gradcheck``, ``curves``,
``profile``. Exit codes: 0 success, 2 malformed input (bad flags,
config, or data), 3 non-convergence (output files are still written),
4 numerical failure (reported with the offending person index),
5 gradient-check tolerance exceeded.

All delimited outputs use 12 significant digits; the report-style
commands also render a matplotlib figure next to each CSV unless
``--no-plot`` is given. The ``MNLFA_THREADS`` environment variable (or
``--threads``) caps BLAS worker threads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np
import pandas as pd

from .config import (
    ConfigError,
    ModelConfig,
    dataset_from_frame,
    estimates_frame,
    load_config,
    packed_from_estimates,
    parse_config,
)
from .estimate import FitConfig, active_delta_count, default_start, fit, penalty_path
from .gradients import value_and_gradient
from .likelihood import Dataset, NotPositiveDefiniteError
from .model import DesignMatrix, pack, unpack
from .penalty import PENALTY_KINDS, PenaltyConfig
from .simulate import correlation_curves, simulate_data

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_NO_CONVERGENCE = 3
EXIT_NUMERICAL = 4
EXIT_GRADCHECK = 5

FLOAT_FMT = "%.12g"


def main(argv=None):
    sys.exit(run(argv))


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    try:
        _apply_thread_limit(getattr(args, "threads", None))
        return args.handler(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except NotPositiveDefiniteError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mnlfa",
        description="Penalized maximum likelihood for moderated factor analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="cap BLAS threads (default: MNLFA_THREADS or library default)")

    p_fit = sub.add_parser("fit", parents=[common], help="fit a model to a data file")
    p_fit.add_argument("--data", required=True, help="CSV with item and covariate columns")
    p_fit.add_argument("--config", required=True, help="model config JSON")
    p_fit.add_argument("--out-dir", default=".", help="directory for output files")
    p_fit.add_argument("--w0", type=float, default=None, help="override penalty weight")
    p_fit.add_argument("--penalty", choices=PENALTY_KINDS, default=None,
                       help="override penalty kind")
    p_fit.add_argument("--seed", type=int, default=None, help="override optimizer seed")
    p_fit.add_argument("--missing", choices=("fiml", "listwise"), default="fiml")
    p_fit.add_argument("--center-covariates", action="store_true",
                       help="mean-center covariates before fitting")
    p_fit.add_argument("--init-from", default=None,
                       help="warm-start from a previously written estimates CSV")
    p_fit.add_argument("--no-se", action="store_true", help="skip standard errors")
    p_fit.add_argument("--no-plot", action="store_true", help="skip the figure")
    p_fit.set_defaults(handler=cmd_fit)

    p_sim = sub.add_parser("simulate", parents=[common],
                           help="draw a dataset from the config's truth values")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--n", type=int, required=True, help="number of persons")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", default="simulated.csv")
    p_sim.add_argument("--covariates-from", default=None,
                       help="CSV supplying covariate columns (default: standard normal draws)")
    p_sim.set_defaults(handler=cmd_simulate)

    p_gc = sub.add_parser("gradcheck", parents=[common],
                          help="compare analytic and finite-difference gradients")
    p_gc.add_argument("--data", required=True)
    p_gc.add_argument("--config", required=True)
    p_gc.add_argument("--eps", type=float, default=1e-6, help="finite-difference step scale")
    p_gc.add_argument("--tol", type=float, default=1e-4, help="max relative error allowed")
    p_gc.add_argument("--out", default="gradcheck.csv")
    p_gc.add_argument("--missing", choices=("fiml", "listwise"), default="fiml")
    p_gc.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p_gc.set_defaults(handler=cmd_gradcheck)

    p_cv = sub.add_parser("curves", parents=[common],
                          help="trace factor correlations over a moderator grid")
    p_cv.add_argument("--config", required=True)
    p_cv.add_argument("--x-min", type=float, default=0.0)
    p_cv.add_argument("--x-max", type=float, default=3.0)
    p_cv.add_argument("--steps", type=int, default=61)
    p_cv.add_argument("--covariate", default=None, help="which covariate to sweep")
    p_cv.add_argument("--out", default="curves.csv")
    p_cv.add_argument("--no-plot", action="store_true")
    p_cv.set_defaults(handler=cmd_curves)

    p_pf = sub.add_parser("profile", parents=[common],
                          help="fit a grid of penalty weights with warm starts")
    p_pf.add_argument("--data", required=True)
    p_pf.add_argument("--config", required=True)
    p_pf.add_argument("--w0-grid", required=True,
                      help="comma-separated ascending weights in [0,1), e.g. 0,0.2,0.5")
    p_pf.add_argument("--out", default="path.csv")
    p_pf.add_argument("--missing", choices=("fiml", "listwise"), default="fiml")
    p_pf.add_argument("--seed", type=int, default=None)
    p_pf.add_argument("--no-plot", action="store_true")
    p_pf.set_defaults(handler=cmd_profile)
    return parser


def _apply_thread_limit(n):
    if n is None:
        env = os.environ.get("MNLFA_THREADS", "").strip()
        if not env:
            return
        try:
            n = int(env)
        except ValueError:
            print(f"warning: ignoring non-integer MNLFA_THREADS={env!r}", file=sys.stderr)
            return
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=n)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def _read_table(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except FileNotFoundError:
        raise ConfigError(f"data file not found: {path}") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise ConfigError(f"could not parse data file {path}: {err}") from None


def _load_model(path) -> ModelConfig:
    return parse_config(load_config(path))


def _center(ds: Dataset) -> Dataset:
    X = ds.X.rows - ds.X.rows.mean(axis=0, keepdims=True)
    return Dataset(ds.Y, DesignMatrix(X, ds.X.column_names), ds.item_names)


def _write_csv(df: pd.DataFrame, path):
    df.to_csv(path, index=False, float_format=FLOAT_FMT)
    print(f"wrote {path}")


def _figure_path(csv_path):
    stem, _ = os.path.splitext(str(csv_path))
    return stem + ".png"


# ---- fit ----

def cmd_fit(args) -> int:
    mc = _load_model(args.config)
    ds = dataset_from_frame(_read_table(args.data), mc, args.missing)
    if args.center_covariates:
        ds = _center(ds)

    pen_cfg = mc.pen_cfg
    if args.penalty is not None:
        blocks = mc.spec.delta_penalty_blocks() if args.penalty != "none" else []
        pen_cfg = PenaltyConfig(kind=args.penalty, w0=pen_cfg.w0,
                                nu_scale=pen_cfg.nu_scale, epsilon=pen_cfg.epsilon,
                                blocks=blocks)
    if args.w0 is not None:
        try:
            pen_cfg = replace(pen_cfg, w0=args.w0)
        except ValueError as err:
            raise ConfigError(str(err)) from None
    fit_cfg = mc.fit_cfg
    if args.seed is not None:
        fit_cfg = replace(fit_cfg, seed=args.seed)
    if args.no_se:
        fit_cfg = replace(fit_cfg, compute_se=False)

    start = None
    if args.init_from:
        packed0 = packed_from_estimates(_read_table(args.init_from), mc)
        start = unpack(packed0, mc.spec)

    os.makedirs(args.out_dir, exist_ok=True)
    t0 = time.perf_counter()
    result = fit(ds, mc.spec, pen_cfg, fit_cfg, start=start)
    wall = time.perf_counter() - t0

    table = estimates_frame(result.packed, mc, result.std_errors, pen_cfg)
    est_path = os.path.join(args.out_dir, "estimates.csv")
    _write_csv(table, est_path)

    summary_path = os.path.join(args.out_dir, "summary.txt")
    n_caveats = int(result.se_caveats.sum()) if result.se_caveats is not None else 0
    lines = [
        f"converged: {str(result.converged).lower()}",
        f"loglik: {result.loglik:.12g}",
        f"penalty: {result.penalty:.12g}",
        f"penalized_objective: {result.penalized_obj:.12g}",
        f"grad_norm: {result.grad_norm:.12g}",
        f"n_iter: {result.n_iter}",
        f"n_parameters: {mc.spec.n_free}",
        f"n_persons: {ds.n_persons}",
        f"n_missing_cells: {ds.n_missing}",
        f"penalty_kind: {pen_cfg.kind}",
        f"w0: {pen_cfg.w0:.12g}",
        f"seed: {fit_cfg.seed}",
        f"n_starts: {fit_cfg.n_starts}",
        f"se_caveats: {n_caveats}",
        f"wall_time_s: {wall:.3f}",
    ]
    with open(summary_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {summary_path}")

    if not args.no_plot:
        from .plotting import save_estimates_figure

        save_estimates_figure(table, os.path.join(args.out_dir, "estimates.png"))
        print(f"wrote {os.path.join(args.out_dir, 'estimates.png')}")

    if not result.converged:
        print("warning: optimizer did not reach the gradient tolerance", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


# ---- simulate ----

def cmd_simulate(args) -> int:
    mc = _load_model(args.config)
    if mc.truth is None:
        raise ConfigError("simulate requires a 'truth' section in the config")
    if args.n < 1:
        raise ConfigError(f"--n must be a positive integer, got {args.n}")

    if args.covariates_from:
        df = _read_table(args.covariates_from)
        for col in mc.covariate_names:
            if col not in df.columns:
                raise ConfigError(f"covariate file is missing column {col!r}")
        X = df[mc.covariate_names].to_numpy(dtype=float)
        if len(X) < args.n:
            raise ConfigError(
                f"covariate file has {len(X)} rows but --n is {args.n}"
            )
        X = X[: args.n]
    else:
        rng = np.random.default_rng(args.seed)
        X = rng.standard_normal((args.n, mc.spec.n_covariates))

    ds = simulate_data(mc.truth, mc.spec, DesignMatrix(X, mc.covariate_names),
                       seed=args.seed + 1, item_names=mc.item_names)
    out = pd.DataFrame(
        np.hstack([ds.Y, ds.X.rows]), columns=mc.item_names + mc.covariate_names
    )
    _write_csv(out, args.out)

    truth_packed = pack(mc.truth, mc.spec)
    sidecar = estimates_frame(truth_packed, mc)[["parameter", "block", "estimate"]]
    sidecar = sidecar.rename(columns={"estimate": "value"})
    stem, _ = os.path.splitext(str(args.out))
    _write_csv(sidecar, stem + ".truth.csv")
    return EXIT_OK


# ---- gradcheck ----

def cmd_gradcheck(args) -> int:
    mc = _load_model(args.config)
    ds = dataset_from_frame(_read_table(args.data), mc, args.missing)
    if ds.n_persons > 200:
        print(
            f"warning: gradcheck runs {2 * mc.spec.n_free} objective evaluations "
            f"over {ds.n_persons} persons; consider a subsample",
            file=sys.stderr,
        )
    if args.eps <= 0:
        raise ConfigError("--eps must be positive")

    params = mc.truth if mc.truth is not None else default_start(ds, mc.spec)
    x0 = pack(params, mc.spec)
    _, analytic, _, _ = value_and_gradient(x0, ds, mc.spec, mc.pen_cfg)
    if args.corrupt:
        analytic = analytic.copy()
        analytic[0] += 1e-3 * (1.0 + abs(analytic[0]))

    def objective(v):
        obj, _, _, _ = value_and_gradient(v, ds, mc.spec, mc.pen_cfg)
        return obj

    fd = np.empty_like(x0)
    for j in range(x0.size):
        h = args.eps * (1.0 + abs(x0[j]))
        e = np.zeros_like(x0)
        e[j] = h
        fd[j] = (objective(x0 + e) - objective(x0 - e)) / (2.0 * h)

    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1.0)
    rel = np.abs(analytic - fd) / scale
    table = pd.DataFrame({
        "coordinate": np.arange(x0.size),
        "parameter": mc.coordinate_names,
        "analytic": analytic,
        "finite_difference": fd,
        "rel_error": rel,
    })
    _write_csv(table, args.out)

    worst = int(np.argmax(rel))
    print(f"max relative error {rel[worst]:.3e} at {table['parameter'][worst]} "
          f"(tolerance {args.tol:g})")
    if rel[worst] > args.tol:
        print("gradient check FAILED", file=sys.stderr)
        return EXIT_GRADCHECK
    print("gradient check passed")
    return EXIT_OK


# ---- curves ----

def cmd_curves(args) -> int:
    mc = _load_model(args.config)
    if mc.spec.n_factors < 2:
        raise ConfigError("curves requires at least two factors")
    if mc.truth is None:
        raise ConfigError("curves requires a 'truth' section with factor correlations")
    if args.steps < 1:
        raise ConfigError(f"--steps must be >= 1, got {args.steps}")
    if args.steps > 1 and not args.x_max > args.x_min:
        raise ConfigError(
            f"invalid grid range [{args.x_min}, {args.x_max}]: x-max must exceed x-min"
        )
    cov_idx = 0
    if args.covariate is not None:
        if args.covariate not in mc.covariate_names:
            raise ConfigError(f"unknown covariate {args.covariate!r}")
        cov_idx = mc.covariate_names.index(args.covariate)
    elif mc.spec.n_covariates == 0:
        raise ConfigError("curves requires at least one covariate in the config")

    grid = np.linspace(args.x_min, args.x_max, args.steps)
    table = correlation_curves(
        mc.truth.gamma0, mc.truth.delta_gamma, grid, mc.spec.corr_param,
        covariate_index=cov_idx, factor_names=mc.factor_names,
    )
    _write_csv(table, args.out)
    if not args.no_plot:
        from .plotting import save_curves_figure

        fig_path = _figure_path(args.out)
        save_curves_figure(table, fig_path)
        print(f"wrote {fig_path}")
    return EXIT_OK


# ---- profile ----

def cmd_profile(args) -> int:
    mc = _load_model(args.config)
    ds = dataset_from_frame(_read_table(args.data), mc, args.missing)
    if mc.pen_cfg.kind == "none":
        raise ConfigError("profile requires a penalty kind in the config")
    try:
        grid = [float(tok) for tok in str(args.w0_grid).split(",") if tok.strip() != ""]
    except ValueError:
        raise ConfigError(f"could not parse --w0-grid {args.w0_grid!r}") from None
    if not grid:
        raise ConfigError("--w0-grid must contain at least one value")
    if any(not 0.0 <= w < 1.0 for w in grid):
        raise ConfigError("--w0-grid values must lie in [0, 1)")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("--w0-grid values must be strictly ascending")

    fit_cfg = mc.fit_cfg
    if args.seed is not None:
        fit_cfg = replace(fit_cfg, seed=args.seed)
    results = penalty_path(ds, mc.spec, mc.pen_cfg, grid, fit_cfg)

    rows = []
    for res in results:
        rows.append({
            "w0": res.w0,
            "loglik": res.loglik,
            "penalty": res.penalty,
            "penalized_objective": res.penalized_obj,
            "bic": res.bic if res.bic is not None else np.nan,
            "n_active_deltas": res.n_active_deltas if res.n_active_deltas is not None else -1,
            "converged": str(res.converged).lower(),
            "status": "ok" if res.error is None else res.error,
        })
    _write_csv(pd.DataFrame(rows), args.out)

    if not args.no_plot:
        from .plotting import save_profile_figure

        ok = [r for r in results if r.error is None]
        if ok:
            names = mc.coordinate_names
            dsl = mc.spec.delta_slice
            save_profile_figure(
                [r.w0 for r in ok],
                np.vstack([r.packed[dsl] for r in ok]),
                names[dsl.start:dsl.stop],
                [r.bic for r in ok],
                [r.n_active_deltas for r in ok],
                _figure_path(args.out),
            )
            print(f"wrote {_figure_path(args.out)}")

    if results and all(not r.converged for r in results):
        print("warning: no grid point reached the gradient tolerance", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    main()
