"""Simulation benchmark for tree-aggregated kernel regression.

Covariates are drawn through a scaled Gaussian copula (marginals
Uniform(-1, 1), dependence from a chosen covariance), features live on a
full binary tree, and responses are one of three fixed surfaces in five
planted group sums.  The ground-truth node set for each surface follows
from the group structure: a node belongs to it exactly when all leaves
below carry the same nonzero group derivative and no ancestor does too.

Every replicate draws train set, test set, and noise from named
substreams of one experiment seed, so the emitted metrics table is a
pure function of the configuration and identical for any thread count.
"""

import os
import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz as _toeplitz
from scipy.special import ndtr

from .errors import (
    CholeskyFailed,
    DimensionMismatch,
    IndexOutOfTree,
    NotPowerOfTwo,
    ValidationError,
)
from .fit import SelectConfig, fit, predict
from .kernels import loocv_loss, nw_predict_batch
from .optim import OptimizerConfig
from .pilot import PilotConfig, fit_leaf_metric
from .tree import build_from_parent_list
from .util import fmt_float, parallel_map, substream, write_csv, write_json

COVARIANCES = ("identity", "toeplitz", "tridiagonal")
SETTINGS = ("nonlinear1", "nonlinear2", "linear")
BASELINES = ("mean", "nw", "nw-ax", "nw-oracle", "aniso-oracle")
MAIN_METHOD = "treekern"

# Bandwidths tried by the isotropic baselines; h enters as gamma = 1/(2 h^2).
BANDWIDTH_GRID = (
    0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5,
    1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6,
)

# Leaf-index ranges of the five group sums at the reference width p=128;
# narrower or wider trees rescale the endpoints proportionally.
_BASE_RANGES = ((1, 4), (33, 34), (65, 69), (97, 97), (98, 98))
_BASE_P = 128

_OFFDIAG = 0.4

_CSV_HEADER = (
    "method", "setting", "covariance", "n", "replicate",
    "rmse", "sn", "sp", "prec", "npv",
)


@dataclass
class SimConfig:
    """One experiment cell: design size, dependence, surface, noise."""

    n: int = 500
    p: int = 128
    covariance: str = "identity"
    setting: str = "nonlinear1"
    noise_scale: float = 0.01
    n_test: int = 1000
    replicates: int = 1
    seed: int = 0
    oracle_restarts: int = 10

    def __post_init__(self):
        if self.n < 1 or self.n_test < 1:
            raise ValidationError("n and n_test must be >= 1")
        if isinstance(self.covariance, str) and self.covariance not in COVARIANCES:
            raise ValidationError(f"unknown covariance {self.covariance!r}")
        if self.setting not in SETTINGS:
            raise ValidationError(f"unknown setting {self.setting!r}")
        if self.noise_scale < 0:
            raise ValidationError("noise_scale must be >= 0")
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if self.oracle_restarts < 1:
            raise ValidationError("oracle_restarts must be >= 1")


@dataclass
class GroundTruth:
    """Noiseless surface, its node set on the tree, and the group leaves."""

    conditional_mean: object
    target_set: tuple
    group_indices: tuple


@dataclass
class Evaluation:
    """Metrics of one method on one replicate; selection ones optional."""

    rmse: float
    sn: float | None = None
    sp: float | None = None
    prec: float | None = None
    npv: float | None = None


@dataclass
class MetricsReport:
    """Per-replicate metric arrays for one method; nan where undefined."""

    method: str
    rmse: np.ndarray
    sn: np.ndarray
    sp: np.ndarray
    prec: np.ndarray
    npv: np.ndarray


# -- covariates ----------------------------------------------------------


def covariance_matrix(p, spec):
    """Resolve a covariance spec (name or matrix) to a p x p array."""
    if isinstance(spec, str):
        if spec == "identity":
            return np.eye(p)
        if spec == "toeplitz":
            return _toeplitz(_OFFDIAG ** np.arange(p))
        if spec == "tridiagonal":
            S = np.eye(p)
            off = np.arange(p - 1)
            S[off, off + 1] = _OFFDIAG
            S[off + 1, off] = _OFFDIAG
            return S
        raise ValidationError(f"unknown covariance {spec!r}")
    S = np.asarray(spec, dtype=np.float64)
    if S.ndim != 2 or S.shape != (p, p):
        raise DimensionMismatch(f"covariance must be {p} x {p}, got {S.shape}")
    if not np.allclose(S, S.T):
        raise CholeskyFailed("covariance matrix is not symmetric")
    return S


def gen_covariates(n, p, covariance="identity", seed=0):
    """Draw n rows with Uniform(-1, 1) marginals and copula dependence.

    Z ~ Normal(0, Sigma) row-wise, X = 2 Phi(Z) - 1 elementwise; every
    entry lies strictly inside (-1, 1).
    """
    Sigma = covariance_matrix(p, covariance)
    try:
        L = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError as exc:
        raise CholeskyFailed("covariance is not positive definite") from exc
    rng = substream(seed, "covariates")
    Z = rng.standard_normal((n, p)) @ L.T
    return 2.0 * ndtr(Z) - 1.0


# -- tree and groups -----------------------------------------------------


def build_full_binary_tree(p):
    """Complete binary tree over p leaves named "1".."p" left to right.

    Internal nodes are numbered level by level above the leaves, so the
    parent of leaves (1, 2) is "p+1" and the root is "2p-1".
    """
    p = int(p)
    if p < 2 or p & (p - 1):
        raise NotPowerOfTwo(f"leaf count must be a power of two >= 2, got {p}")
    pairs = []
    level = [str(j) for j in range(1, p + 1)]
    nxt = p + 1
    while len(level) > 1:
        merged = []
        for i in range(0, len(level), 2):
            name = str(nxt)
            nxt += 1
            pairs.append((level[i], name))
            pairs.append((level[i + 1], name))
            merged.append(name)
        level = merged
    pairs.append((level[0], None))
    return build_from_parent_list(pairs, [str(j) for j in range(1, p + 1)])


def scale_groups(p):
    """Five disjoint leaf-index groups, rescaled from the p=128 layout.

    Endpoints map through b -> floor((b-1) p / 128) + 1; a group whose
    start lands inside the previous one is bumped just past it.
    """
    p = int(p)
    groups = []
    prev_hi = 0
    for lo, hi in _BASE_RANGES:
        lo2 = (lo - 1) * p // _BASE_P + 1
        hi2 = (hi - 1) * p // _BASE_P + 1
        if lo2 <= prev_hi:
            lo2 = prev_hi + 1
        if hi2 < lo2:
            hi2 = lo2
        if hi2 > p:
            raise IndexOutOfTree(
                f"group [{lo}, {hi}] rescaled to [{lo2}, {hi2}] past leaf {p}"
            )
        groups.append(tuple(range(lo2, hi2 + 1)))
        prev_hi = hi2
    return tuple(groups)


def group_sums(X, groups):
    """n x k matrix of leaf-column sums, one column per group."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    p = X.shape[1]
    cols = []
    for g in groups:
        idx = np.asarray(g, dtype=np.int64) - 1
        if idx.size == 0 or idx.min() < 0 or idx.max() >= p:
            raise IndexOutOfTree(f"group {tuple(g)} outside 1..{p}")
        cols.append(X[:, idx].sum(axis=1))
    return np.column_stack(cols)


# -- responses -----------------------------------------------------------


def _surface(S, setting):
    if S.shape[1] != 5:
        raise ValidationError("surfaces need exactly five group sums")
    S1, S2, S3, S4, S5 = (S[:, k] for k in range(5))
    if setting == "nonlinear1":
        return S1**2 + 5.0 * np.cos(S2) - S4 + 10.0 * S5**2 / (1.0 + S3**2)
    if setting == "nonlinear2":
        return S1**3 + 5.0 * np.sin(S2) - 2.0 * S3**2 - S4 + 0.5 * S5**5
    if setting == "linear":
        return 2.0 * S1 + 5.0 * S2 + S3 - 3.0 * S4 - 2.0 * S5
    raise ValidationError(f"unknown setting {setting!r}")


def gen_response(X_leaf, setting, seed=0, noise_scale=0.01, groups=None, tree=None):
    """Responses plus ground truth for one covariate sample.

    The noise level is relative: its standard deviation is noise_scale
    times the standard deviation of the noiseless surface on this very
    sample, recomputed per call.  Passing the tree fills in the
    ground-truth node set; without it target_set stays empty.
    """
    X = np.atleast_2d(np.asarray(X_leaf, dtype=np.float64))
    if groups is None:
        groups = scale_groups(X.shape[1])
    groups = tuple(tuple(int(j) for j in g) for g in groups)
    f = _surface(group_sums(X, groups), setting)
    sigma_y = float(np.std(f))
    rng = substream(seed, "noise")
    Y = f + noise_scale * sigma_y * rng.standard_normal(f.shape[0])

    def conditional_mean(Xq):
        return _surface(group_sums(Xq, groups), setting)

    target = true_target_set(tree, groups) if tree is not None else ()
    return Y, GroundTruth(conditional_mean, tuple(target), groups)


def true_target_set(tree, groups):
    """Nodes whose leaves share one nonzero group and are maximal with it.

    A node qualifies when every leaf below it belongs to the same group
    and its parent has leaves outside that group; the root qualifies
    with no parent condition.  Groups that are not single subtrees get
    covered by several nodes.
    """
    p = tree.leaf_count
    fingerprint = np.zeros(p, dtype=np.int64)
    for k, g in enumerate(groups, start=1):
        idx = np.asarray(g, dtype=np.int64) - 1
        if idx.size == 0 or idx.min() < 0 or idx.max() >= p:
            raise IndexOutOfTree(f"group {tuple(g)} outside 1..{p}")
        if np.any(fingerprint[idx] != 0):
            raise ValidationError("groups must be disjoint")
        fingerprint[idx] = k

    def uniform_group(v):
        vals = fingerprint[np.flatnonzero(tree.A[v])]
        return int(vals[0]) if vals[0] != 0 and np.all(vals == vals[0]) else 0

    out = []
    for v, name in enumerate(tree.names):
        if not uniform_group(v):
            continue
        par = int(tree.parent_idx[v])
        if par >= 0 and uniform_group(par):
            continue
        out.append(name)
    return tuple(out)


# -- metrics -------------------------------------------------------------


def selection_metrics(selected, target, total_nodes):
    """(sn, sp, prec, npv) of a selected node set against the truth.

    Empty denominators resolve to 1: nothing selected means no false
    positives, nothing predicted negative means no false negatives.
    """
    sel = set(selected)
    tgt = set(target)
    total = int(total_nodes)
    if len(sel | tgt) > total:
        raise ValidationError("more distinct nodes than total_nodes")
    tp = len(sel & tgt)
    fp = len(sel - tgt)
    fn = len(tgt - sel)
    tn = total - tp - fp - fn
    sn = tp / len(tgt) if tgt else 1.0
    sp = tn / (total - len(tgt)) if total > len(tgt) else 1.0
    prec = tp / len(sel) if sel else 1.0
    npv = tn / (tn + fn) if tn + fn else 1.0
    return sn, sp, prec, npv


def evaluate(predictor, ground_truth, X_test, selected=None, total_nodes=None):
    """Score predictions against the noiseless conditional mean.

    predictor is either a callable over leaf-level rows or an already
    computed prediction vector.  Selection metrics are filled in only
    when a selected node set is given.
    """
    X_test = np.atleast_2d(np.asarray(X_test, dtype=np.float64))
    yhat = np.asarray(predictor(X_test) if callable(predictor) else predictor)
    f = ground_truth.conditional_mean(X_test)
    if yhat.shape != f.shape:
        raise DimensionMismatch("predictions and test rows disagree")
    rmse = float(np.sqrt(np.mean((f - yhat) ** 2)))
    if selected is None:
        return Evaluation(rmse=rmse)
    if total_nodes is None:
        raise ValidationError("selection metrics need total_nodes")
    sn, sp, prec, npv = selection_metrics(
        selected, ground_truth.target_set, total_nodes
    )
    return Evaluation(rmse=rmse, sn=sn, sp=sp, prec=prec, npv=npv)


# -- baselines -----------------------------------------------------------


def isotropic_gamma(h, d):
    """Metric vector of a scalar bandwidth: gamma_v = 1/(2 h^2)."""
    h = float(h)
    if h <= 0:
        raise ValidationError("bandwidth must be positive")
    return np.full(d, 0.5 / h**2)


def cv_bandwidth(X, Y, grid=BANDWIDTH_GRID):
    """Pick the grid bandwidth with the smallest leave-one-out loss.

    Ties go to the largest bandwidth, so degenerate flat loss profiles
    resolve to the smoothest candidate.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64)
    d = X.shape[1]
    losses = [loocv_loss(X, Y, isotropic_gamma(h, d)).loss for h in grid]
    best_h, best = None, np.inf
    for h, loss in zip(reversed(grid), reversed(losses)):
        if loss < best:
            best_h, best = h, loss
    if best_h is None:
        best_h = grid[-1]
    return best_h, np.asarray(losses)


def nw_fixed(X_train, Y_train, X_query, h):
    """Isotropic kernel predictions at a fixed scalar bandwidth."""
    X_train = np.atleast_2d(np.asarray(X_train, dtype=np.float64))
    gamma = isotropic_gamma(h, X_train.shape[1])
    pred, _ = nw_predict_batch(X_query, X_train, Y_train, gamma)
    return pred


def run_baselines(tree, X_train, Y_train, X_test, ground_truth,
                  config=None, seed=0, threads=None, methods=None):
    """Predictions of the non-selecting reference methods on X_test.

    mean: training-response mean.  nw: isotropic kernel on the leaves,
    bandwidth by leave-one-out grid search.  nw-ax: the same over all
    aggregated node features.  nw-oracle: isotropic kernel on the true
    group sums at the deterministic bandwidth n^(-1/(4+t)), t the size
    of the true node set.  aniso-oracle: per-column metric on the true
    group sums, tuned by restarted leave-one-out search.

    methods restricts the work to a subset; the mean reference is always
    included.  Returns (predictions by method, info dict with the tuned
    bandwidths of whatever ran).
    """
    config = config or SimConfig()
    wanted = set(BASELINES if methods is None else methods) | {"mean"}
    unknown = wanted - set(BASELINES)
    if unknown:
        raise ValidationError(f"unknown baseline methods {sorted(unknown)}")
    X_train = np.atleast_2d(np.asarray(X_train, dtype=np.float64))
    X_test = np.atleast_2d(np.asarray(X_test, dtype=np.float64))
    Y_train = np.asarray(Y_train, dtype=np.float64)
    n = X_train.shape[0]
    needs_oracle = wanted & {"nw-oracle", "aniso-oracle"}
    if needs_oracle and not ground_truth.target_set:
        raise ValidationError("oracle baselines need a ground-truth node set")

    preds = {}
    info = {}
    preds["mean"] = np.full(X_test.shape[0], float(Y_train.mean()))

    if "nw" in wanted:
        h_nw, _ = cv_bandwidth(X_train, Y_train)
        preds["nw"] = nw_fixed(X_train, Y_train, X_test, h_nw)
        info["h_nw"] = float(h_nw)

    if "nw-ax" in wanted:
        agg_train = tree.aggregate(X_train)
        agg_test = tree.aggregate(X_test)
        h_ax, _ = cv_bandwidth(agg_train, Y_train)
        preds["nw-ax"] = nw_fixed(agg_train, Y_train, agg_test, h_ax)
        info["h_nw_ax"] = float(h_ax)

    if needs_oracle:
        S_train = group_sums(X_train, ground_truth.group_indices)
        S_test = group_sums(X_test, ground_truth.group_indices)

    if "nw-oracle" in wanted:
        h_oracle = float(n) ** (-1.0 / (4.0 + len(ground_truth.target_set)))
        preds["nw-oracle"] = nw_fixed(S_train, Y_train, S_test, h_oracle)
        info["h_oracle"] = h_oracle

    if "aniso-oracle" in wanted:
        gamma, _ = fit_leaf_metric(
            S_train,
            Y_train,
            PilotConfig(restarts=config.oracle_restarts),
            seed=seed,
            threads=threads,
        )
        preds["aniso-oracle"], _ = nw_predict_batch(S_test, S_train, Y_train, gamma)
        info["gamma_aniso"] = [float(g) for g in gamma]

    return preds, info


# -- experiment runner ---------------------------------------------------


def _child_seed(seed, *path):
    return int(substream(seed, *path).integers(2**31 - 1))


def _run_replicate(tree, groups, config, replicate, methods,
                   pilot_config, select_config, opt_config, threads):
    def s(tag):
        return _child_seed(config.seed, "rep", replicate, tag)

    X_train = gen_covariates(config.n, config.p, config.covariance, seed=s("train"))
    X_test = gen_covariates(
        config.n_test, config.p, config.covariance, seed=s("test")
    )
    Y, gt = gen_response(
        X_train,
        config.setting,
        seed=s("noise"),
        noise_scale=config.noise_scale,
        groups=groups,
        tree=tree,
    )

    def row(method, ev):
        return {
            "method": method,
            "setting": config.setting,
            "covariance": str(config.covariance),
            "n": config.n,
            "replicate": replicate,
            "rmse": ev.rmse,
            "sn": ev.sn,
            "sp": ev.sp,
            "prec": ev.prec,
            "npv": ev.npv,
        }

    rows = []
    info = {"replicate": replicate}
    if MAIN_METHOD in methods:
        t0 = time.perf_counter()
        result = fit(
            tree,
            X_train,
            Y,
            pilot_config=pilot_config,
            select_config=select_config,
            opt_config=opt_config,
            seed=s("fit"),
            threads=threads,
        )
        yhat, _ = predict(tree, result.gamma_hat, X_train, Y, X_test)
        ev = evaluate(
            yhat, gt, X_test,
            selected=result.selected, total_nodes=tree.node_count,
        )
        rows.append(row(MAIN_METHOD, ev))
        info["selected"] = list(result.selected)
        info["lambda_star"] = result.lambda_star
        info["never_converged"] = bool(result.diagnostics.get("never_converged"))
        info["fit_seconds"] = time.perf_counter() - t0

    base_methods = [m for m in BASELINES if m in methods]
    preds, base_info = run_baselines(
        tree, X_train, Y, X_test, gt,
        config=config, seed=s("baselines"), threads=threads,
        methods=base_methods,
    )
    for method in BASELINES:
        if method in preds and (method in methods or method == "mean"):
            rows.append(row(method, evaluate(preds[method], gt, X_test)))
    info.update(base_info)
    return rows, info


def _format_row(r):
    cells = [r["method"], r["setting"], r["covariance"], str(r["n"]),
             str(r["replicate"])]
    for key in ("rmse", "sn", "sp", "prec", "npv"):
        cells.append("" if r[key] is None else fmt_float(r[key]))
    return cells


def run_experiment(config, out_dir=None, pilot_config=None, select_config=None,
                   opt_config=None, skip_fit=False, threads=None, methods=None,
                   manifest_extra=None):
    """Run all replicates of one experiment cell.

    Returns (rows, manifest); with out_dir set also writes metrics.csv
    and manifest.json there.  methods picks a subset of the pipeline
    plus baselines (mean always runs); skip_fit drops the pipeline.
    Replicates run in parallel; row order, and therefore the CSV bytes,
    never depend on the thread count.  Timing fields in the manifest are
    the one non-reproducible part.  manifest_extra merges extra
    top-level keys (e.g. command-line provenance) into the manifest.
    """
    all_methods = (MAIN_METHOD,) + BASELINES
    if methods is None:
        methods = all_methods
    unknown = set(methods) - set(all_methods)
    if unknown:
        raise ValidationError(f"unknown methods {sorted(unknown)}")
    methods = tuple(m for m in all_methods if (m in methods or m == "mean"))
    if skip_fit:
        methods = tuple(m for m in methods if m != MAIN_METHOD)

    tree = build_full_binary_tree(config.p)
    groups = scale_groups(config.p)
    target = true_target_set(tree, groups)
    inner = threads if config.replicates == 1 else None
    t0 = time.perf_counter()

    def one(rep):
        return _run_replicate(
            tree, groups, config, rep, methods,
            pilot_config, select_config, opt_config, inner,
        )

    outputs = parallel_map(one, range(config.replicates), threads=threads)
    rows = [r for rows_r, _ in outputs for r in rows_r]
    rep_info = [info for _, info in outputs]
    fit_seconds = [info.pop("fit_seconds") for info in rep_info
                   if "fit_seconds" in info]

    manifest = {
        "config": {
            "n": config.n,
            "p": config.p,
            "covariance": str(config.covariance),
            "setting": config.setting,
            "noise_scale": config.noise_scale,
            "n_test": config.n_test,
            "replicates": config.replicates,
            "seed": config.seed,
            "oracle_restarts": config.oracle_restarts,
            "skip_fit": bool(skip_fit),
        },
        "groups": {
            f"G{k + 1}": [min(g), max(g)] for k, g in enumerate(groups)
        },
        "group_indices": [list(g) for g in groups],
        "target_set": list(target),
        "tree_nodes": tree.node_count,
        "methods": list(methods),
        "bandwidth_grid": list(BANDWIDTH_GRID),
        "replicate_info": rep_info,
        "timing": {
            "wall_seconds": time.perf_counter() - t0,
            "fit_seconds": fit_seconds,
        },
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    if out_dir is not None:
        write_csv(
            os.path.join(str(out_dir), "metrics.csv"),
            _CSV_HEADER,
            [_format_row(r) for r in rows],
        )
        write_json(os.path.join(str(out_dir), "manifest.json"), manifest)
    return rows, manifest


def summarize(rows):
    """Per-method MetricsReport list, methods in first-appearance order."""
    order = []
    by_method = {}
    for r in rows:
        m = r["method"]
        if m not in by_method:
            order.append(m)
            by_method[m] = []
        by_method[m].append(r)
    reports = []
    for m in order:
        recs = by_method[m]

        def arr(key):
            return np.array(
                [np.nan if rec[key] is None else float(rec[key]) for rec in recs]
            )

        reports.append(
            MetricsReport(
                method=m, rmse=arr("rmse"), sn=arr("sn"), sp=arr("sp"),
                prec=arr("prec"), npv=arr("npv"),
            )
        )
    return reports
