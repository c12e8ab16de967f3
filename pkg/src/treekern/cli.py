"""Command-line entry points: fit, predict, and simulate.

Every command writes a manifest.json recording the resolved
configuration, input digests, software version, and stage timings, next
to its numeric outputs.  The numeric outputs are byte-reproducible for
a fixed seed at any thread count; the manifest's timing block is the
only part that varies between runs.

Exit codes: 0 success, 2 validation or usage error, 3 numerical
failure.
"""

import argparse
import json
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from . import __version__
from .errors import NumericalError, ValidationError
from .fit import SelectConfig, fit, fit_result_to_dict, predict
from .kernels import KERNELS
from .optim import STRATEGIES, OptimizerConfig
from .pilot import DISTANCES, METHODS, PilotConfig
from .simbench import (
    BASELINES,
    COVARIANCES,
    MAIN_METHOD,
    SETTINGS,
    SimConfig,
    run_experiment,
)
from .tree import read_tree_csv
from .util import fmt_float, read_csv, sha256_file, write_csv, write_json

THREADS_ENV = "TREEKERN_THREADS"

_COV_ALIASES = {
    "id": "identity",
    "identity": "identity",
    "toeplitz": "toeplitz",
    "tridiag": "tridiagonal",
    "tridiagonal": "tridiagonal",
}

# Accepted on the command line; left side is what users may type.
_METHOD_ALIASES = {
    "krtexas": MAIN_METHOD,
    MAIN_METHOD: MAIN_METHOD,
    "krtexas-oracle": "aniso-oracle",
    **{m: m for m in BASELINES},
}


# -- ingestion -----------------------------------------------------------


def _read_table(path):
    try:
        return read_csv(path)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc


def _parse_cell(path, row_no, col_no, text):
    try:
        return float(text)
    except ValueError as exc:
        raise ValidationError(
            f"{path}: row {row_no}, column {col_no}: not a number: {text!r}"
        ) from exc


def read_matrix_csv(path):
    """Numeric CSV with a mandatory header; returns (header, n x d array)."""
    header, rows = _read_table(path)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    data = []
    for i, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ValidationError(
                f"{path}: row {i}: {len(row)} cells, header has {len(header)}"
            )
        data.append([_parse_cell(path, i, j + 1, c) for j, c in enumerate(row)])
    return header, np.asarray(data, dtype=np.float64)


def read_response_csv(path):
    header, Y = read_matrix_csv(path)
    if Y.shape[1] != 1:
        raise ValidationError(f"{path}: expected one response column, got {Y.shape[1]}")
    return Y[:, 0]


def _load_tree(path):
    try:
        return read_tree_csv(path)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc


def _check_leaf_header(path, header, tree):
    if list(header) != list(tree.leaf_names):
        raise ValidationError(
            f"{path}: column names {list(header)} do not match the tree's "
            f"leaves {list(tree.leaf_names)}"
        )


def _digest(path):
    return {"path": str(path), "sha256": sha256_file(path)}


def _resolve_threads(args):
    if getattr(args, "threads", None) is not None:
        return args.threads
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise ValidationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc


def _out_dir(args):
    out = str(args.out)
    os.makedirs(out, exist_ok=True)
    return out


# -- config from flags -----------------------------------------------------


def _configs(args):
    pilot = PilotConfig(
        method=args.method,
        oversmooth_exponent=args.oversmooth_exponent,
        interior_fraction=args.interior_fraction,
        distance=args.distance,
        a2=args.a2,
        b=args.b,
        restarts=args.restarts_stage1,
    )
    landmarks = None
    if args.budget_landmarks:
        landmarks = tuple(int(t) for t in args.budget_landmarks.split(","))
    select = SelectConfig(
        nfolds=args.nfolds,
        min_lambda=args.min_lambda,
        max_lambda=args.max_lambda,
        nlambda=args.nlambda,
        restarts=args.restarts_stage2,
        warm_start=not args.no_warm_start,
        max_attempts_stage_3=args.max_attempts_stage3,
        budget_landmarks=landmarks,
        gamma_init=args.gamma_init,
    )
    opt = OptimizerConfig(
        eps=args.eps, max_iterations=args.max_iterations, memory=args.memory
    )
    return pilot, select, opt


def _config_block(pilot, select, opt):
    return {"pilot": asdict(pilot), "select": asdict(select), "optimizer": asdict(opt)}


# -- commands --------------------------------------------------------------


def cmd_fit(args):
    tree = _load_tree(args.tree)
    x_header, X = read_matrix_csv(args.x)
    _check_leaf_header(args.x, x_header, tree)
    Y = read_response_csv(args.y)
    if X.shape[0] != Y.shape[0]:
        raise ValidationError(
            f"{args.x} has {X.shape[0]} rows but {args.y} has {Y.shape[0]}"
        )
    pilot, select, opt = _configs(args)
    threads = _resolve_threads(args)
    out = _out_dir(args)

    timings = {}
    t0 = time.perf_counter()
    result = fit(
        tree,
        X,
        Y,
        pilot_config=pilot,
        select_config=select,
        opt_config=opt,
        seed=args.seed,
        threads=threads,
        fixed_lambda=args.lam,
        timings=timings,
    )
    timings["total_seconds"] = time.perf_counter() - t0

    write_json(os.path.join(out, "result.json"), fit_result_to_dict(result))
    weight_rows = []
    for v, name in enumerate(tree.names):
        imp = result.importance.get(name)
        weight_rows.append(
            [
                name,
                fmt_float(result.weights.w[v]),
                fmt_float(result.gamma_hat[v]),
                "" if imp is None else fmt_float(imp),
            ]
        )
    write_csv(
        os.path.join(out, "weights.csv"),
        ("node", "weight", "gamma", "importance"),
        weight_rows,
    )
    manifest = {
        "command": "fit",
        "version": __version__,
        "seed": args.seed,
        "threads": threads,
        "config": {**_config_block(pilot, select, opt), "fixed_lambda": args.lam},
        "inputs": {
            "x": _digest(args.x),
            "y": _digest(args.y),
            "tree": _digest(args.tree),
        },
        "outputs": ["result.json", "weights.csv"],
        "timings": timings,
    }
    write_json(os.path.join(out, "manifest.json"), manifest)
    print(
        f"fit: lambda*={fmt_float(result.lambda_star)} "
        f"selected={len(result.selected)} of {tree.node_count} nodes -> {out}"
    )
    return 0


def cmd_predict(args):
    tree = _load_tree(args.tree)
    x_header, X = read_matrix_csv(args.x)
    _check_leaf_header(args.x, x_header, tree)
    Y = read_response_csv(args.y)
    if X.shape[0] != Y.shape[0]:
        raise ValidationError(
            f"{args.x} has {X.shape[0]} rows but {args.y} has {Y.shape[0]}"
        )
    new_header, X_new = read_matrix_csv(args.x_new)
    if X_new.shape[1] != tree.leaf_count:
        raise ValidationError(
            f"{args.x_new}: {X_new.shape[1]} columns, tree has "
            f"{tree.leaf_count} leaves"
        )
    _check_leaf_header(args.x_new, new_header, tree)
    try:
        with open(args.result, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read {args.result}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{args.result}: bad JSON: {exc}") from exc
    gamma = np.asarray(doc.get("gamma_hat", []), dtype=np.float64)
    if gamma.shape != (tree.node_count,):
        raise ValidationError(
            f"{args.result}: gamma_hat has length {gamma.size}, "
            f"tree has {tree.node_count} nodes"
        )
    out = _out_dir(args)

    t0 = time.perf_counter()
    preds, flags = predict(tree, gamma, X, Y, X_new, kernel=args.kernel)
    elapsed = time.perf_counter() - t0
    write_csv(
        os.path.join(out, "predictions.csv"),
        ("prediction", "fallback"),
        [[fmt_float(p), "1" if f else "0"] for p, f in zip(preds, flags)],
    )
    manifest = {
        "command": "predict",
        "version": __version__,
        "kernel": args.kernel,
        "inputs": {
            "result": _digest(args.result),
            "x": _digest(args.x),
            "y": _digest(args.y),
            "tree": _digest(args.tree),
            "x_new": _digest(args.x_new),
        },
        "outputs": ["predictions.csv"],
        "timings": {"predict_seconds": elapsed},
    }
    write_json(os.path.join(out, "manifest.json"), manifest)
    print(
        f"predict: {len(preds)} rows, {int(flags.sum())} fallback(s) -> {out}"
    )
    return 0


def cmd_simulate(args):
    methods = []
    for token in args.methods.split(","):
        token = token.strip()
        if not token:
            continue
        if token not in _METHOD_ALIASES:
            raise ValidationError(
                f"unknown method {token!r}; choose from "
                f"{sorted(set(_METHOD_ALIASES))}"
            )
        methods.append(_METHOD_ALIASES[token])
    if not methods:
        raise ValidationError("no methods requested")
    config = SimConfig(
        n=args.n,
        p=args.p,
        covariance=_COV_ALIASES[args.cov],
        setting=args.setting,
        noise_scale=args.noise_scale,
        n_test=args.n_test,
        replicates=args.reps,
        seed=args.seed,
        oracle_restarts=args.oracle_restarts,
    )
    pilot, select, opt = _configs(args)
    threads = _resolve_threads(args)
    out = _out_dir(args)
    rows, manifest = run_experiment(
        config,
        out_dir=out,
        pilot_config=pilot,
        select_config=select,
        opt_config=opt,
        skip_fit=args.skip_fit,
        threads=threads,
        methods=tuple(methods),
        manifest_extra={
            "command": "simulate",
            "version": __version__,
            "threads": threads,
            "pipeline_config": _config_block(pilot, select, opt),
        },
    )
    print(
        f"simulate: {len(rows)} rows over {config.replicates} replicate(s) -> {out}"
    )
    return 0


# -- parser ----------------------------------------------------------------


def _add_config_flags(sub):
    g = sub.add_argument_group("pipeline configuration")
    g.add_argument("--nfolds", type=int, default=5)
    g.add_argument("--nlambda", type=int, default=10)
    g.add_argument("--min-lambda", type=float, default=None)
    g.add_argument("--max-lambda", type=float, default=None)
    g.add_argument("--eps", type=float, default=1e-6)
    g.add_argument("--max-iterations", type=int, default=500)
    g.add_argument("--memory", type=int, default=10)
    g.add_argument("--restarts-stage1", type=int, default=30,
                   help="pilot-metric restarts")
    g.add_argument("--restarts-stage2", type=int, default=30,
                   help="selection restarts (largest budget landmark)")
    g.add_argument("--max-attempts-stage3", type=int, default=10)
    g.add_argument("--budget-landmarks", type=str, default=None,
                   help="comma-separated restart budgets to compare")
    g.add_argument("--method", choices=METHODS, default="LLR")
    g.add_argument("--distance", choices=DISTANCES, default="L2")
    g.add_argument("--gamma-init", choices=STRATEGIES, default="small")
    g.add_argument("--oversmooth-exponent", type=float, default=0.75)
    g.add_argument("--interior-fraction", type=float, default=0.10)
    g.add_argument("--a2", type=float, default=None)
    g.add_argument("--b", type=float, default=1.0)
    g.add_argument("--no-warm-start", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: ${THREADS_ENV} or serial)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="treekern",
        description="Tree-aggregated anisotropic kernel regression tools",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p_fit = subs.add_parser("fit", help="fit the full pipeline on CSV data")
    p_fit.add_argument("--x", required=True, help="n x p feature CSV, leaf-name header")
    p_fit.add_argument("--y", required=True, help="n x 1 response CSV")
    p_fit.add_argument("--tree", required=True, help="tree CSV (parent list or 0/1 matrix)")
    p_fit.add_argument("--out", default=".", help="output directory")
    p_fit.add_argument("--lambda", dest="lam", type=float, default=None,
                       help="skip cross-validation and fit at this penalty")
    _add_config_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_pred = subs.add_parser("predict", help="predict at new points from a saved fit")
    p_pred.add_argument("--result", required=True, help="result.json from fit")
    p_pred.add_argument("--x", required=True, help="training feature CSV")
    p_pred.add_argument("--y", required=True, help="training response CSV")
    p_pred.add_argument("--tree", required=True)
    p_pred.add_argument("--x-new", required=True, help="query feature CSV")
    p_pred.add_argument("--kernel", choices=KERNELS, default="gaussian")
    p_pred.add_argument("--out", default=".")
    p_pred.set_defaults(func=cmd_predict)

    p_sim = subs.add_parser("simulate", help="run a simulation experiment cell")
    p_sim.add_argument("--setting", choices=SETTINGS, required=True)
    p_sim.add_argument("--cov", choices=sorted(_COV_ALIASES), default="id")
    p_sim.add_argument("--n", type=int, default=500)
    p_sim.add_argument("--p", type=int, default=128)
    p_sim.add_argument("--reps", type=int, default=1)
    p_sim.add_argument("--n-test", type=int, default=1000)
    p_sim.add_argument("--noise-scale", type=float, default=0.01)
    p_sim.add_argument("--methods", type=str,
                       default=",".join((MAIN_METHOD,) + BASELINES))
    p_sim.add_argument("--skip-fit", action="store_true",
                       help="run baselines only")
    p_sim.add_argument("--oracle-restarts", type=int, default=10)
    p_sim.add_argument("--out", default=".")
    _add_config_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
