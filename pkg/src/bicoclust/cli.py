"""Command-line front end: fit, tune, impute, and sim subcommands.

Options resolve in three layers: built-in defaults, then a flat
``key = value`` config file (``#`` starts a comment), then command-line
flags, which win.  Logging goes to standard error; standard out stays
silent unless ``--stdout`` asks for the primary artifact there.

Exit codes: 0 success, 1 input error, 2 iteration cap reached without
convergence, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .core import DataMatrix, Hyperparameters
from .graph import build_affinities
from .io import (
    InputError,
    heatmap_svg,
    matrix_csv_text,
    read_matrix_csv,
    write_json,
    write_matrix_csv,
    write_table_csv,
    write_vector_csv,
)
from .palm import DEFAULT_PALM_CONFIG, fit
from .simbench import (
    run_noise_study,
    run_uninformative_study,
    theorem1_check,
    write_tidy_csv,
)
from .tuning import (
    assign_clusters,
    default_gamma_grid,
    default_lambda_grid,
    fit_missing,
    make_holdout,
    refit_u_star,
    tune_gamma,
    tune_lambda,
)

__all__ = ["main"]

logger = logging.getLogger(__name__)

_TRUE_WORDS = {"1", "true", "yes", "on"}
_FALSE_WORDS = {"0", "false", "no", "off"}


# ----------------------------------------------------------------------
# option plumbing


def parse_config_file(path) -> dict:
    """Flat ``key = value`` pairs; keys are normalized to flag spelling."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from exc
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise InputError(f"{path}: line {lineno}: expected 'key = value'")
        out[key.strip().lower().replace("_", "-")] = value.strip()
    return out


def _cast_config(value: str, kind, key: str):
    if kind is bool:
        low = value.lower()
        if low in _TRUE_WORDS:
            return True
        if low in _FALSE_WORDS:
            return False
        raise InputError(f"config key {key}: expected true/false, got {value!r}")
    if kind == "floats":
        try:
            grid = [float(tok) for tok in value.split(",") if tok.strip()]
        except ValueError:
            raise InputError(f"config key {key}: expected comma-separated "
                             f"numbers, got {value!r}") from None
        if not grid:
            raise InputError(f"config key {key} is empty")
        return grid
    try:
        return kind(value)
    except ValueError:
        raise InputError(f"config key {key}: cannot parse {value!r}") from None


def _setting(args, config, key: str, kind, default):
    dest = "lam" if key == "lambda" else key.replace("-", "_")
    flag_value = getattr(args, dest, None)
    if flag_value is not None:
        return flag_value
    if key in config:
        return _cast_config(config[key], kind, key)
    return default


def _resolve_threads(args, config) -> int:
    threads = _setting(args, config, "threads", int, None)
    if threads is None:
        env = os.environ.get("BICOCLUST_THREADS", "").strip()
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise InputError(
                    f"BICOCLUST_THREADS is not an integer: {env!r}") from None
        else:
            threads = 1
    if threads < 1:
        raise InputError("threads must be >= 1")
    return threads


def _load_common(args):
    config = parse_config_file(args.config) if args.config else {}
    hp = Hyperparameters(
        gamma=_setting(args, config, "gamma", float, 1.0),
        lam=_setting(args, config, "lambda", float, 0.0),
        tau=_setting(args, config, "tau", float, 1.0),
        k_row=_setting(args, config, "k-row", int, 5),
        k_col=_setting(args, config, "k-col", int, 5),
    )
    cfg = replace(
        DEFAULT_PALM_CONFIG,
        tol=_setting(args, config, "tol", float, DEFAULT_PALM_CONFIG.tol),
        max_outer_iter=_setting(args, config, "max-iter", int,
                                DEFAULT_PALM_CONFIG.max_outer_iter),
        adaptive=_setting(args, config, "adaptive", bool, False),
    )
    seed = _setting(args, config, "seed", int, 0)
    threads = _resolve_threads(args, config)
    return config, hp, cfg, seed, threads


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: "
                         f"{exc.strerror}") from exc
    return out


def _read_complete(path) -> np.ndarray:
    mf = read_matrix_csv(path)
    if not mf.complete:
        raise InputError(f"{path} contains missing entries; run the impute "
                         "command first")
    return mf.values


def _graphs(X: DataMatrix, hp: Hyperparameters):
    phi = build_affinities(X.values, hp.k_row, hp.tau, scale_dim=X.p)
    psi = build_affinities(X.values.T, hp.k_col, hp.tau, scale_dim=X.n)
    return phi, psi


def _echo(args, path: Path) -> None:
    if args.stdout:
        sys.stdout.write(path.read_text())


# ----------------------------------------------------------------------
# subcommands


def _write_fit_artifacts(out: Path, state, rows, cols, U_star,
                         hp: Hyperparameters, cfg) -> None:
    write_matrix_csv(out / "U.csv", state.U)
    write_vector_csv(out / "weights.csv", state.w.values)
    write_vector_csv(out / "row_labels.csv", rows, integer=True)
    write_vector_csv(out / "col_labels.csv", cols, integer=True)
    write_json(out / "diagnostics.json", {
        "gamma": hp.gamma,
        "lambda": hp.lam,
        "tau": hp.tau,
        "k_row": hp.k_row,
        "k_col": hp.k_col,
        "adaptive": cfg.adaptive,
        "tol": cfg.tol,
        "max_iter": cfg.max_outer_iter,
        "iterations": state.iterations,
        "converged": state.converged,
        "objective_trace": state.objective_trace,
        "per_iteration": state.diagnostics,
        "num_row_clusters": int(rows.max()) + 1,
        "num_col_clusters": int(cols.max()) + 1,
    })
    with open(out / "heatmap.svg", "w") as fh:
        fh.write(heatmap_svg(U_star, rows, cols))


def cmd_fit(args) -> int:
    _, hp, cfg, _, _ = _load_common(args)
    out = _out_dir(args)
    X = DataMatrix(_read_complete(args.input))
    phi, psi = _graphs(X, hp)
    state = fit(X, phi, psi, hp, cfg)
    rows, cols = assign_clusters(state.U, state.w, lam=hp.lam)
    U_star, _ = refit_u_star(X.values, rows, cols, state.w)
    _write_fit_artifacts(out, state, rows, cols, U_star, hp, cfg)
    _echo(args, out / "U.csv")
    logger.info("fit: %d iterations, converged=%s, %d row / %d column "
                "clusters", state.iterations, state.converged,
                rows.max() + 1, cols.max() + 1)
    return 0 if state.converged else 2


def cmd_tune(args) -> int:
    config, hp, cfg, seed, threads = _load_common(args)
    fraction = _setting(args, config, "holdout-fraction", float, 0.85)
    out = _out_dir(args)
    X = DataMatrix(_read_complete(args.input))
    gamma_grid = (_cast_config(config["gamma-grid"], "floats", "gamma-grid")
                  if "gamma-grid" in config else default_gamma_grid())
    lambda_grid = (_cast_config(config["lambda-grid"], "floats", "lambda-grid")
                   if "lambda-grid" in config else default_lambda_grid(X.p))
    phi, psi = _graphs(X, hp)

    split = make_holdout(X.n, X.p, fraction, seed)
    gsel = tune_gamma(X, phi, psi, gamma_grid, split, hp_base=hp, cfg=cfg,
                      threads=threads)
    write_table_csv(out / "gamma_path.csv",
                    ["gamma", "holdout_sse", "converged"],
                    [(r.value, r.score, r.converged) for r in gsel.path])
    logger.info("tune: selected gamma=%g", gsel.gamma)

    lsel = tune_lambda(X, phi, psi, gsel.gamma, lambda_grid, hp_base=hp,
                       cfg=cfg, threads=threads)
    model = lsel.model
    write_table_csv(out / "lambda_path.csv",
                    ["lambda", "ebic", "df", "converged"],
                    [(r.value, r.score, r.df, r.converged)
                     for r in lsel.path])
    write_json(out / "model.json", {
        "gamma": model.gamma,
        "lambda": model.lam,
        "ebic": model.ebic,
        "df": model.df,
        "row_labels": model.row_labels,
        "col_labels": model.col_labels,
        "weights": model.w.values,
        "converged": model.converged,
    })
    logger.info("tune: selected lambda=%g (eBIC %.6g, df %d)", model.lam,
                model.ebic, model.df)

    hp_star = replace(hp, gamma=model.gamma, lam=model.lam)
    state = fit(X, phi, psi, hp_star, cfg)
    rows, cols = assign_clusters(state.U, state.w, lam=hp_star.lam)
    U_star, _ = refit_u_star(X.values, rows, cols, state.w)
    _write_fit_artifacts(out, state, rows, cols, U_star, hp_star, cfg)
    _echo(args, out / "model.json")
    return 0 if (model.converged and state.converged) else 2


def cmd_impute(args) -> int:
    _, hp, cfg, _, _ = _load_common(args)
    out = _out_dir(args)
    mf = read_matrix_csv(args.input)
    observed_per_col = mf.mask.sum(axis=0)
    if (observed_per_col == 0).any():
        bad = int(np.argmin(observed_per_col))
        raise InputError(f"column {mf.column_name(bad)} has no observed "
                         "entries, so it cannot be imputed")
    if mf.complete:
        logger.info("impute: no missing entries, writing the input through")
        write_matrix_csv(out / "completed.csv", mf.values)
        write_json(out / "impute_diag.json", {
            "missing_entries": 0,
            "mm_iterations": 0,
            "mm_converged": True,
            "mm_objective_trace": [],
        })
        _echo(args, out / "completed.csv")
        return 0
    X = DataMatrix(mf.values, mask=mf.mask)
    # neighbor distances need a complete matrix; fill the gaps with the
    # observed mean, the same value the missing-data loop starts from
    filled = np.where(mf.mask, mf.values, mf.values[mf.mask].mean())
    phi = build_affinities(filled, hp.k_row, hp.tau, scale_dim=X.p)
    psi = build_affinities(filled.T, hp.k_col, hp.tau, scale_dim=X.n)
    state = fit_missing(X, phi, psi, hp, cfg)
    completed = np.where(mf.mask, mf.values, state.U)
    write_matrix_csv(out / "completed.csv", completed)
    write_json(out / "impute_diag.json", {
        "missing_entries": int((~mf.mask).sum()),
        "mm_iterations": state.mm_iterations,
        "mm_converged": state.mm_converged,
        "mm_objective_trace": state.mm_objective_trace,
        "inner_iterations": state.iterations,
        "inner_converged": state.converged,
        "objective_trace": state.objective_trace,
    })
    _echo(args, out / "completed.csv")
    logger.info("impute: %d entries filled in %d sweeps, converged=%s",
                int((~mf.mask).sum()), state.mm_iterations,
                state.mm_converged)
    return 0 if state.mm_converged else 2


_SIM_TINY = {
    "1": dict(n=12, p=10, p_extra_grid=(0, 4), sigma=1.0, n_clusters=2,
              replicates=2, gamma=5.0, k=3),
    "2": dict(sizes=((12, 10),), sigma_grid=(1.0,), p_extra=4, n_clusters=2,
              replicates=2, gamma=5.0, k=3),
    "theorem1": dict(n=12, p=12, sigma=0.5, replicates=3),
}


def cmd_sim(args) -> int:
    config = parse_config_file(args.config) if args.config else {}
    seed = _setting(args, config, "seed", int, 0)
    threads = _resolve_threads(args, config)
    out = _out_dir(args)
    kwargs = dict(_SIM_TINY[args.study]) if args.scale == "tiny" else {}
    if args.replicates is not None:
        kwargs["replicates"] = args.replicates
    if args.gamma is not None and args.study != "theorem1":
        kwargs["gamma"] = args.gamma

    if args.study == "1":
        rows = run_uninformative_study(root_seed=seed, threads=threads,
                                       **kwargs)
    elif args.study == "2":
        rows = run_noise_study(root_seed=seed, threads=threads, **kwargs)
    else:
        records = theorem1_check(seed=seed, threads=threads, details=True,
                                 **kwargs)
        rows = []
        for r, rec in enumerate(records):
            base = {"study": "theorem1", "n": kwargs.get("n", 20),
                    "p": kwargs.get("p", 20),
                    "p_extra": 0, "sigma": kwargs.get("sigma", 1.0),
                    "seed": r, "method": "bcbc"}
            for metric in ("lhs", "rhs", "gamma", "holds"):
                rows.append({**base, "metric": metric,
                             "value": float(rec[metric])})
    write_tidy_csv(rows, out / "results.csv")
    _write_summary(rows, out / "summary.csv")
    _echo(args, out / "results.csv")
    logger.info("sim: study %s (%s scale) wrote %d result rows", args.study,
                args.scale, len(rows))
    return 0


def _write_summary(rows, path) -> None:
    """Group means and standard errors (sd / sqrt(replicates))."""
    groups = {}
    for r in rows:
        key = (r["study"], r["n"], r["p"], r["p_extra"], r["sigma"],
               r["method"], r["metric"])
        groups.setdefault(key, []).append(float(r["value"]))
    table = []
    for key in sorted(groups):
        vals = np.array(groups[key])
        se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 \
            else 0.0
        table.append([*key, float(vals.mean()), se, vals.size])
    write_table_csv(path, ["study", "n", "p", "p_extra", "sigma", "method",
                           "metric", "mean", "se", "replicates"], table)


# ----------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage, which this tool reserves
    # for non-convergence; route usage problems through the input-error
    # path instead
    def error(self, message):
        raise InputError(message)


def _add_common(sp, with_input=True):
    if with_input:
        sp.add_argument("input", help="input matrix CSV")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--config", help="flat key = value config file")
    sp.add_argument("--gamma", type=float, help="fusion strength")
    sp.add_argument("--lambda", dest="lam", type=float,
                    help="feature-weight penalty")
    sp.add_argument("--tau", type=float, help="affinity kernel bandwidth")
    sp.add_argument("--k-row", type=int, help="row-graph neighbor count")
    sp.add_argument("--k-col", type=int, help="column-graph neighbor count")
    sp.add_argument("--adaptive", action="store_const", const=True,
                    help="refresh affinities from the current iterate")
    sp.add_argument("--tol", type=float, help="outer stopping tolerance")
    sp.add_argument("--max-iter", type=int, help="outer iteration cap")
    sp.add_argument("--seed", type=int, help="random seed")
    sp.add_argument("--threads", type=int,
                    help="worker cap (default $BICOCLUST_THREADS or 1)")
    sp.add_argument("--stdout", action="store_true",
                    help="echo the primary artifact to standard out")
    level = sp.add_mutually_exclusive_group()
    level.add_argument("--quiet", action="store_true",
                       help="warnings and errors only")
    level.add_argument("--debug", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bicoclust",
                     description="Biconvex biclustering with feature weights")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("fit", help="fit at fixed hyperparameters")
    _add_common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("tune", help="two-stage hyperparameter selection")
    _add_common(sp)
    sp.add_argument("--holdout-fraction", type=float,
                    help="fraction of entries kept observed for the "
                         "gamma stage")
    sp.set_defaults(func=cmd_tune)

    sp = sub.add_parser("impute", help="fill missing entries (NA or empty)")
    _add_common(sp)
    sp.set_defaults(func=cmd_impute)

    sp = sub.add_parser("sim", help="simulation studies and bound checks")
    sp.add_argument("study", choices=["1", "2", "theorem1"],
                    help="1: padded noise columns; 2: noise level and size; "
                         "theorem1: error bound Monte-Carlo")
    sp.add_argument("--scale", choices=["desk", "tiny"], default="desk")
    sp.add_argument("--replicates", type=int)
    _add_common(sp, with_input=False)
    sp.set_defaults(func=cmd_sim)
    return parser


def _configure_logging(args) -> None:
    if getattr(args, "debug", False):
        level = logging.DEBUG
    elif getattr(args, "quiet", False):
        level = logging.WARNING
    else:
        level = logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except InputError as exc:
        print(f"bicoclust: error: {exc}", file=sys.stderr)
        return 1
    _configure_logging(args)
    try:
        return args.func(args)
    except InputError as exc:
        logger.error(str(exc))
        return 1
    except ValueError as exc:
        logger.error(str(exc))
        return 1
    except Exception:
        logger.exception("internal error")
        return 3


if __name__ == "__main__":
    sys.exit(main())
