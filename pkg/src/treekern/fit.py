"""Model selection and the full fitting pipeline.

Step B of the procedure: K-fold cross-validation over a descending lambda
grid at three restart-budget landmarks, warm-starting each lambda from the
across-fold average of the previous lambda's solutions, then a final
full-data fit at the selected (lambda*, m*) with convergence retries,
coordinate snapping, support extraction, and importance scoring.

Restart streams are indexed by (fold, lambda-step, restart) only, never by
budget, so the three budget landmarks reuse one restart pool at the top of
the grid: best-of-the-first-m is exactly what running budget m alone would
produce, at a third of the cost.
"""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import AllRestartsFailed, TooFewSamples, ValidationError
from .kernels import loocv_gradient, nw_predict_batch
from .optim import (
    STRATEGIES,
    OptimizerConfig,
    draw_init,
    snap_gamma,
    spred_run,
)
from .pilot import AdaptiveWeights, PilotConfig, run_pilot
from .util import parallel_map, substream


@dataclass
class SelectConfig:
    """Cross-validation knobs; lambda_grid overrides the automatic grid."""

    nfolds: int = 5
    lambda_grid: tuple | None = None
    min_lambda: float | None = None
    max_lambda: float | None = None
    nlambda: int = 10
    restarts: int = 30
    warm_start: bool = True
    max_attempts_stage_3: int = 10
    budget_landmarks: tuple | None = None
    gamma_init: str = "small"

    def __post_init__(self):
        if self.nfolds < 2:
            raise ValidationError("nfolds must be >= 2")
        if self.nlambda < 1:
            raise ValidationError("nlambda must be >= 1")
        if self.restarts < 1:
            raise ValidationError("restart count must be >= 1")
        if self.gamma_init not in STRATEGIES:
            raise ValidationError(f"unknown init strategy {self.gamma_init!r}")

    def landmarks(self):
        if self.budget_landmarks is not None:
            marks = tuple(sorted(set(int(m) for m in self.budget_landmarks)))
            if not marks or marks[0] < 1 or marks[-1] > self.restarts:
                raise ValidationError("budget landmarks must lie in 1..restarts")
            return marks
        R = self.restarts
        return tuple(sorted({int(np.ceil(R / 3)), int(np.ceil(2 * R / 3)), R}))


@dataclass
class FitResult:
    """Final fitted metric plus everything the selection run recorded."""

    gamma_hat: np.ndarray
    lambda_star: float
    m_star: int
    selected: list
    importance: dict
    cv_table: list
    weights: AdaptiveWeights | None
    diagnostics: dict = field(default_factory=dict)


def make_folds(n, K, seed):
    """K disjoint test-index sets covering range(n), sizes differing by <= 1."""
    if n < K:
        raise TooFewSamples(f"cannot split n={n} into {K} folds")
    perm = substream(seed, "folds").permutation(n)
    base, extra = divmod(n, K)
    folds, start = [], 0
    for k in range(K):
        size = base + (1 if k < extra else 0)
        folds.append(np.sort(perm[start : start + size]))
        start += size
    return folds


def engine_bound(X, Y):
    """B = max(max row norm of X, max |Y|): the scale entering the gradient bound."""
    row = float(np.max(np.linalg.norm(X, axis=1))) if X.size else 0.0
    return max(row, float(np.max(np.abs(Y))), 1e-12)


def zero_entry_scale(X, Y, what):
    """Smallest lambda at which no coordinate can leave the all-zero metric.

    Coordinate v escapes zero only when its descent pull |dL/dgamma_v(0)|
    beats the penalty slope lambda * what_v, so the scale is the largest
    |gradient| / weight ratio over unpinned coordinates.  Zero when every
    coordinate is pinned or the gradient vanishes.
    """
    what = np.asarray(what, dtype=np.float64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    free = np.isfinite(what) & (what > 0)
    if not free.any():
        return 0.0
    g0 = loocv_gradient(X, Y, np.zeros(X.shape[1])).gradient
    return float(np.max(np.abs(g0[free]) / what[free]))


def resolve_lambda_grid(X, Y, what, config):
    """Descending lambda grid.

    The automatic top value is twice the zero-entry scale, so the all-zero
    metric is stationary there with margin; when that scale degenerates to
    zero the worst-case bound 16 B^4 / min finite weight stands in.  The
    automatic bottom sits 1e-6 below the top.
    """
    if config.lambda_grid is not None:
        grid = np.asarray(sorted(config.lambda_grid, reverse=True), dtype=np.float64)
        if grid.size == 0 or np.any(grid < 0):
            raise ValidationError("explicit lambda grid must be nonempty, >= 0")
        return grid
    finite = np.asarray(what)[np.isfinite(what)]
    finite = finite[finite > 0]
    if config.max_lambda is not None:
        lam_max = float(config.max_lambda)
    elif finite.size:
        scale = zero_entry_scale(X, Y, what)
        if scale > 0.0:
            lam_max = 2.0 * scale
        else:
            lam_max = 16.0 * engine_bound(X, Y) ** 4 / float(finite.min())
    else:
        lam_max = 1.0  # every coordinate pinned: lambda is immaterial
    lam_min = float(config.min_lambda) if config.min_lambda is not None else lam_max * 1e-6
    if config.nlambda == 1:
        return np.array([lam_max])
    return np.geomspace(lam_max, lam_min, config.nlambda)


def select_cell(grid, marks, sse, tie_rtol=1e-6):
    """argmin over (lambda-step, budget) cells by SSE.

    Cells within a 1e-6 relative window of the minimum count as tied --
    finite-tolerance solvers jitter numerically identical models by more
    than exact equality can absorb -- and ties break toward larger lambda
    (earlier grid position), then smaller budget.  All-infinite tables fall
    back to the sparsest cell.
    """
    finite = [v for v in sse.values() if np.isfinite(v)]
    if not finite:
        return (0, marks[0])  # every cell failed; caller sees +inf rows
    cutoff = min(finite) * (1.0 + tie_rtol)
    for t in range(len(grid)):  # lambda descending, budgets ascending: first win
        for m in marks:
            val = sse[(t, m)]
            if np.isfinite(val) and val <= cutoff:
                return (t, m)
    return (0, marks[0])


def _fold_sse(X, Y, train, test, gamma):
    pred, _ = nw_predict_batch(X[test], X[train], Y[train], gamma)
    return float(np.sum((Y[test] - pred) ** 2))


def _spred_restart(X, Y, lam, what, rng, strategy, opt_config):
    n, T = X.shape
    u0 = draw_init(strategy, T, n=n, T=T, rng=rng)
    w0 = draw_init(strategy, T, n=n, T=T, rng=rng)
    return spred_run(X, Y, lam, what, u0, w0, opt_config)


def _warm_run(X, Y, lam, what, gamma_prev, opt_config):
    # a literal zero start is a stationary saddle of the factorized
    # objective, so warm factors are floored away from it
    root = np.sqrt(np.maximum(gamma_prev, 1e-6))
    return spred_run(X, Y, lam, what, root, root, opt_config)


def cv_select(X, Y, what, config=None, opt_config=None, seed=0, threads=None):
    """Grid search over (lambda, restart budget) by total held-out SSE.

    Returns (lambda_star, m_star, cv_table, diagnostics).  Ties break
    toward larger lambda, then smaller budget.
    """
    config = config or SelectConfig()
    opt_config = opt_config or OptimizerConfig()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64)
    what = np.asarray(what, dtype=np.float64)
    n = len(Y)
    K = config.nfolds
    folds = make_folds(n, K, seed)
    train_sets = [np.setdiff1d(np.arange(n), f) for f in folds]
    grid = resolve_lambda_grid(X, Y, what, config)
    marks = config.landmarks()
    R = marks[-1]

    # restart pool for one (fold, lambda-step); budgets share it
    def pool(k, t):
        out = []
        for r in range(R):
            rng = substream(seed, "cv", k, t, r)
            state, obj, conv, _ = _spred_restart(
                X[train_sets[k]], Y[train_sets[k]], grid[t], what, rng,
                STRATEGIES[r % len(STRATEGIES)], opt_config,
            )
            out.append((state, obj, conv))
        return out

    def best_of(results, m):
        objs = [obj for _, obj, _ in results[:m]]
        return results[int(np.argmin(objs))]

    sse = {}  # (t, m) -> total held-out SSE
    current = {}  # (m, k) -> SpredState carried along the warm chain
    grid_adequate = True
    for t in range(len(grid)):
        if t == 0 or not config.warm_start:
            pools = parallel_map(lambda k: pool(k, t), range(K), threads=threads)
            for m in marks:
                for k in range(K):
                    current[(m, k)] = best_of(pools[k], m)[0]
        else:
            jobs = [(m, k) for m in marks for k in range(K)]

            def warm_cell(job):
                m, k = job
                avg = np.mean([current[(m, kk)].gamma for kk in range(K)], axis=0)
                state, obj, conv, _ = _warm_run(
                    X[train_sets[k]], Y[train_sets[k]], grid[t], what, avg, opt_config
                )
                return state

            states = parallel_map(warm_cell, jobs, threads=threads)
            for job, state in zip(jobs, states):
                current[job] = state
        for m in marks:
            total = 0.0
            for k in range(K):
                # score the model as it would ship: snapped metric
                total += _fold_sse(
                    X, Y, train_sets[k], folds[k], snap_gamma(current[(m, k)].gamma)
                )
            sse[(t, m)] = total
        if t == 0:
            tops = [snap_gamma(current[(m, k)].gamma) for m in marks for k in range(K)]
            if any(g.any() for g in tops):
                grid_adequate = False
                warnings.warn(
                    "largest lambda does not zero the metric; grid top may be too small"
                )

    cv_table = [
        {"lambda": float(grid[t]), "budget": int(m), "sse": float(sse[(t, m)])}
        for t in range(len(grid))
        for m in marks
    ]
    best_key = select_cell(grid, marks, sse)
    lambda_star = float(grid[best_key[0]])
    m_star = int(best_key[1])
    diagnostics = {"grid_adequate": grid_adequate, "grid": [float(g) for g in grid]}
    return lambda_star, m_star, cv_table, diagnostics


def final_fit(
    X,
    Y,
    what,
    lambda_star,
    m_star,
    config=None,
    opt_config=None,
    seed=0,
    threads=None,
    node_names=None,
    weights=None,
    cv_table=None,
    extra_diagnostics=None,
):
    """Full-data fit at (lambda*, m*) with convergence retries.

    Non-converged restart-search outcomes are retried up to
    max_attempts_stage_3 times from fresh draws of the configured retry
    strategy; converged candidates are preferred by objective, and if none
    converge the best attempt ships with never_converged set.
    """
    config = config or SelectConfig()
    opt_config = opt_config or OptimizerConfig()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64)
    what = np.asarray(what, dtype=np.float64)
    n, T = X.shape
    names = list(node_names) if node_names is not None else [str(v) for v in range(T)]

    def one(r):
        rng = substream(seed, "final", r)
        state, obj, conv, _ = _spred_restart(
            X, Y, lambda_star, what, rng, STRATEGIES[r % len(STRATEGIES)], opt_config
        )
        return (state, obj, conv)

    runs = parallel_map(one, range(m_star), threads=threads)
    retries = 0
    while not any(conv for _, _, conv in runs) and retries < config.max_attempts_stage_3:
        rng = substream(seed, "final-retry", retries)
        state, obj, conv, _ = _spred_restart(
            X, Y, lambda_star, what, rng, config.gamma_init, opt_config
        )
        runs.append((state, obj, conv))
        retries += 1

    finite_runs = [(s, o, c) for s, o, c in runs if np.isfinite(o)]
    if not finite_runs:
        raise AllRestartsFailed("no final-fit attempt produced a finite objective")
    converged_runs = [(s, o) for s, o, c in finite_runs if c]
    candidates = converged_runs if converged_runs else [(s, o) for s, o, _ in finite_runs]
    objs = [o for _, o in candidates]
    best_state = candidates[int(np.argmin(objs))][0]
    never_converged = not converged_runs

    gamma_hat = snap_gamma(best_state.gamma)
    support = np.flatnonzero(gamma_hat > 0)
    selected = [names[v] for v in support]
    variances = np.var(X, axis=0, ddof=1) if n > 1 else np.zeros(T)
    importance = {names[v]: float(gamma_hat[v] * variances[v]) for v in support}

    diagnostics = {
        "restart_objectives": [float(o) for _, o, _ in runs],
        "converged_flags": [bool(c) for _, _, c in runs],
        "pinned": [names[v] for v in np.flatnonzero(~np.isfinite(what))],
        "retries": retries,
        "never_converged": never_converged,
    }
    if extra_diagnostics:
        diagnostics.update(extra_diagnostics)
    return FitResult(
        gamma_hat=gamma_hat,
        lambda_star=float(lambda_star),
        m_star=int(m_star),
        selected=selected,
        importance=importance,
        cv_table=cv_table if cv_table is not None else [],
        weights=weights,
        diagnostics=diagnostics,
    )


def check_nestedness(tree, selected):
    """Ancestor-descendant co-selections in a support set (reported, not fixed)."""
    chosen = set(selected)
    out = []
    for name in tree.names:
        if name not in chosen:
            continue
        rel = tree.relations(name)
        for d in sorted(rel.de & chosen):
            out.append((name, d))
    return out


def fit(
    tree,
    X_leaf,
    Y,
    pilot_config=None,
    select_config=None,
    opt_config=None,
    seed=0,
    threads=None,
    fixed_lambda=None,
    timings=None,
):
    """End-to-end fit: pilot weights, CV selection, final full-data model.

    X_leaf is the n x p leaf-level feature matrix; aggregated node features
    are built from the tree.  Output is a pure function of
    (tree, X_leaf, Y, configs, seed).  fixed_lambda skips cross-validation
    and fits at exactly that penalty; a timings dict, when passed, receives
    per-stage wall-clock seconds (kept out of the result so serialized fits
    stay reproducible).
    """
    pilot_config = pilot_config or PilotConfig()
    select_config = select_config or SelectConfig()
    opt_config = opt_config or OptimizerConfig()
    X_leaf = np.atleast_2d(np.asarray(X_leaf, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64)
    if X_leaf.shape[0] != len(Y):
        raise ValidationError("X and Y row counts differ")

    t0 = time.perf_counter()
    weights, derivs, gamma_check = run_pilot(
        tree, X_leaf, Y, pilot_config, opt_config, seed=seed, threads=threads
    )
    t1 = time.perf_counter()
    X_agg = tree.aggregate(X_leaf)
    if fixed_lambda is not None:
        if fixed_lambda < 0:
            raise ValidationError("fixed lambda must be >= 0")
        lambda_star = float(fixed_lambda)
        m_star = select_config.restarts
        cv_table = []
        cv_diag = {"lambda_fixed": True}
    else:
        lambda_star, m_star, cv_table, cv_diag = cv_select(
            X_agg, Y, weights.w, select_config, opt_config, seed=seed, threads=threads
        )
    t2 = time.perf_counter()
    result = final_fit(
        X_agg,
        Y,
        weights.w,
        lambda_star,
        m_star,
        select_config,
        opt_config,
        seed=seed,
        threads=threads,
        node_names=tree.names,
        weights=weights,
        cv_table=cv_table,
        extra_diagnostics={
            **cv_diag,
            "gamma_check": [float(g) for g in gamma_check],
            "interior_size": int(len(derivs.J)),
            "nestedness_violations": [],
        },
    )
    result.diagnostics["nestedness_violations"] = [
        list(pair) for pair in check_nestedness(tree, result.selected)
    ]
    if timings is not None:
        t3 = time.perf_counter()
        timings["pilot_seconds"] = t1 - t0
        timings["cv_seconds"] = t2 - t1
        timings["final_seconds"] = t3 - t2
    return result


def predict(tree, gamma_hat, X_train_leaf, Y_train, X_query_leaf, kernel="gaussian"):
    """Predict responses at leaf-level query rows from a fitted metric.

    Returns (predictions, fallback_flags); flagged rows got the training
    mean because every kernel weight vanished (always possible with the
    compact prediction kernel).
    """
    Xt = tree.aggregate(np.atleast_2d(np.asarray(X_train_leaf, dtype=np.float64)))
    Xq = tree.aggregate(np.atleast_2d(np.asarray(X_query_leaf, dtype=np.float64)))
    return nw_predict_batch(Xq, Xt, np.asarray(Y_train, dtype=np.float64), gamma_hat, kernel)


def fit_result_to_dict(result):
    """Plain-dict form of a FitResult for JSON export."""
    importance = sorted(result.importance.items(), key=lambda kv: (-kv[1], kv[0]))
    return {
        "lambda_star": result.lambda_star,
        "m_star": result.m_star,
        "gamma_hat": [float(g) for g in result.gamma_hat],
        "selected": list(result.selected),
        "importance": [{"node": k, "score": v} for k, v in importance],
        "cv_table": result.cv_table,
        "diagnostics": result.diagnostics,
    }


def stationarity_margin(X, Y, what, lam):
    """Worst-coordinate slack of the all-zero metric at this lambda.

    min over unpinned v of lam * what_v - |dL/dgamma_v(0)|.  Nonnegative
    margin certifies that no coordinate can profitably leave zero, so the
    all-zero metric is stationary for the penalized objective.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    what = np.asarray(what, dtype=np.float64)
    free = np.isfinite(what)
    if not free.any():
        return np.inf
    rep = loocv_gradient(X, Y, np.zeros(X.shape[1]))
    return float(np.min(lam * what[free] - np.abs(rep.gradient[free])))
