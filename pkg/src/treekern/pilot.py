"""Pilot stage: leaf-level metric, interior points, per-point leaf
derivatives, and the adaptive penalty weights built from them.

The stage runs entirely at leaf level (aggregation ignored): fit an
anisotropic metric over the p observed features by restarted LOOCV
minimization, oversmooth it elementwise (gamma^z), score every sample by
its kernel neighbourhood mass under the oversmoothed metric, keep the
densest tenth as interior points, estimate the p partial derivatives of
the regression surface at each of them, and turn those derivatives into
one penalty weight per tree node:

    w_v = (n^{a2} C_{v,1})^b + C_{v,2}^{-b} + C_{v,3}^{-b}

where C_{v,1} averages derivative disagreement inside the node's leaf
block, C_{v,2} the block's distance from zero, and C_{v,3} its distance
from the sibling blocks.  A zero C_2 or C_3 makes the weight infinite,
which pins the node's coordinate at zero downstream.  The root has no
siblings, so its C_3 term is dropped (recorded as an infinite C_3).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import EmptyInterior, TooFewSamples, ValidationError
from .kernels import pairwise_weights
from .optim import OptimizerConfig, draw_init, gamma_run, restart_search
from .util import parallel_map

METHODS = ("LLR", "LQR", "NW_ML")
DISTANCES = ("L1", "L2")


@dataclass
class PilotConfig:
    """Knobs for the pilot stage; a2 = None resolves to 1/(2(2+p)) at use."""

    method: str = "LLR"
    oversmooth_exponent: float = 0.75
    interior_fraction: float = 0.10
    distance: str = "L2"
    a2: float | None = None
    b: float = 1.0
    restarts: int = 30

    def __post_init__(self):
        if not 0.0 < self.oversmooth_exponent < 1.0:
            raise ValidationError("oversmooth exponent must lie in (0, 1)")
        if not 0.0 < self.interior_fraction <= 1.0:
            raise ValidationError("interior fraction must lie in (0, 1]")
        if self.method not in METHODS:
            raise ValidationError(f"unknown derivative method {self.method!r}")
        if self.distance not in DISTANCES:
            raise ValidationError(f"unknown distance {self.distance!r}")
        if self.restarts < 1:
            raise ValidationError("restart count must be >= 1")

    def resolved_a2(self, p):
        return self.a2 if self.a2 is not None else 1.0 / (2.0 * (2.0 + p))


@dataclass
class PilotDerivatives:
    """Interior indices and the |J| x p derivative estimates at them."""

    J: np.ndarray
    beta: np.ndarray
    ridge_points: list = field(default_factory=list)
    dropped: list = field(default_factory=list)


@dataclass
class AdaptiveWeights:
    """Per-node penalty weights (inf allowed) plus their three ingredients."""

    w: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray


def fit_leaf_metric(X, Y, config=None, opt_config=None, seed=0, threads=None):
    """Restart-best unpenalized LOOCV metric over the p leaf features.

    Returns (gamma_check, best_loss).
    """
    config = config or PilotConfig()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64)
    n, p = X.shape
    if n < 3:
        raise TooFewSamples("pilot metric fit needs n >= 3")

    def run_one(r, strategy, rng):
        g0 = draw_init(strategy, p, n=n, T=p, rng=rng)
        return gamma_run(X, Y, g0, opt_config)

    best, _ = restart_search(run_one, config.restarts, seed, threads=threads)
    return best.x, best.objective


def oversmooth(gamma, z):
    """Elementwise gamma^z; z in (0, 1) pulls the metric toward 1."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if np.any(gamma < 0):
        raise ValidationError("oversmooth needs a nonnegative metric")
    return gamma**z


def interior_points(X, gamma, fraction=0.10):
    """Indices of the floor(fraction*n) samples with the largest kernel mass.

    K_i = sum_{j != i} K_gamma(X_i, X_j); ties break toward lower index.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    m = int(np.floor(fraction * n))
    if m < 1:
        raise EmptyInterior(f"interior fraction {fraction} of n={n} keeps no points")
    W = pairwise_weights(X, X, gamma)
    np.fill_diagonal(W, 0.0)
    K = W.sum(axis=1)
    # stable sort on negated scores: equal masses keep index order
    order = np.argsort(-K, kind="stable")
    return np.sort(order[:m])


def _wls_solve(Z, w, y, ridge_scale=1e-8):
    # Weighted normal equations; ill-conditioned systems get a diagonal
    # jitter of ridge_scale * trace / ncol.  Cholesky alone misses exactly
    # singular matrices that round to positive pivots, hence the cond guard.
    Zw = Z * w[:, None]
    G = Z.T @ Zw
    rhs = Zw.T @ y
    if np.linalg.cond(G) < 1e12:
        try:
            return cho_solve(cho_factor(G), rhs), False
        except np.linalg.LinAlgError:
            pass
    jitter = ridge_scale * np.trace(G) / G.shape[0]
    if jitter <= 0.0:
        jitter = ridge_scale
    G = G + jitter * np.eye(G.shape[0])
    return np.linalg.solve(G, rhs), True


def estimate_derivatives(X, Y, gamma_pilot, J, method="LLR", threads=None):
    """Per-point estimates of the p partial derivatives at the interior points.

    LLR fits a kernel-weighted linear model centered at X_i over all n
    samples and reads the slopes.  LQR appends the p squared centered
    columns (diagonal quadratic only) and still reads the linear slopes.
    NW_ML differentiates the full-sample NW predictor analytically:

        beta_iv = -2 gamma_v sum_j K_ij (X_iv - X_jv)(Y_j - mhat_i) / sum_j K_ij.

    Near-singular local designs fall back to a ridge solve and are flagged;
    points whose weights all vanish are dropped from J.
    """
    if method not in METHODS:
        raise ValidationError(f"unknown derivative method {method!r}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64)
    gamma_pilot = np.asarray(gamma_pilot, dtype=np.float64)
    J = np.asarray(J, dtype=np.int64)
    p = X.shape[1]

    def one_point(i):
        w = pairwise_weights(X[i : i + 1], X, gamma_pilot)[0]
        total = w.sum()
        if total <= 0.0:
            return None, False
        if method == "NW_ML":
            mhat = float(w @ Y) / total
            diff = X[i] - X
            beta = -2.0 * gamma_pilot * ((w * (Y - mhat)) @ diff) / total
            return beta, False
        centered = X - X[i]
        cols = [np.ones(X.shape[0]), centered]
        if method == "LQR":
            cols.append(centered**2)
        Z = np.column_stack(cols)
        coef, ridged = _wls_solve(Z, w, Y)
        return coef[1 : p + 1], ridged

    results = parallel_map(one_point, J.tolist(), threads=threads)
    rows, keep, ridge_points, dropped = [], [], [], []
    for idx, (beta, ridged) in zip(J.tolist(), results):
        if beta is None:
            dropped.append(idx)
            continue
        rows.append(beta)
        keep.append(idx)
        if ridged:
            ridge_points.append(idx)
    if not rows:
        raise EmptyInterior("every interior point lost its kernel weights")
    return PilotDerivatives(
        J=np.asarray(keep, dtype=np.int64),
        beta=np.vstack(rows),
        ridge_points=ridge_points,
        dropped=dropped,
    )


def _distance_tables(beta, distance):
    # D[u, w] = mean_i d(beta_iu, beta_iw); D0[u] = mean_i d(beta_iu, 0)
    diff = beta[:, :, None] - beta[:, None, :]
    if distance == "L2":
        D = np.mean(diff**2, axis=0)
        D0 = np.mean(beta**2, axis=0)
    else:
        D = np.mean(np.abs(diff), axis=0)
        D0 = np.mean(np.abs(beta), axis=0)
    return D, D0


def compute_weights(tree, derivs, config, n):
    """Adaptive penalty weights for every node of the tree.

    n is the full training sample count entering the n^{a2} inflation of
    the within-block disagreement term.
    """
    config = config or PilotConfig()
    beta = np.asarray(derivs.beta, dtype=np.float64)
    p = tree.leaf_count
    if beta.shape[1] != p:
        raise ValidationError(
            f"derivatives cover {beta.shape[1]} leaves, tree has {p}"
        )
    a2 = config.resolved_a2(p)
    b = config.b
    D, D0 = _distance_tables(beta, config.distance)
    A = tree.A.astype(np.float64)
    T = tree.node_count

    c1 = np.zeros(T)
    c2 = np.zeros(T)
    c3 = np.zeros(T)
    for v in range(T):
        mask = A[v]
        k = mask.sum()
        # within-block disagreement: full quadratic form counts ordered
        # pairs, diagonal is zero, so halve it; leaves have no pairs
        c1[v] = (mask @ D @ mask) / (k * (k - 1.0)) if k > 1 else 0.0
        c2[v] = (mask @ D0) / k
        parent = tree.parent_idx[v]
        if parent < 0:
            c3[v] = np.inf  # no siblings: the C3 term drops out for the root
        else:
            sib_mask = A[parent] - mask
            ks = sib_mask.sum()
            c3[v] = (mask @ D @ sib_mask) / (k * ks)

    with np.errstate(divide="ignore"):
        w = (float(n) ** a2 * c1) ** b + c2 ** (-b) + c3 ** (-b)
    return AdaptiveWeights(w=w, c1=c1, c2=c2, c3=c3)


def run_pilot(tree, X, Y, config=None, opt_config=None, seed=0, threads=None):
    """Full pilot stage over leaf-level features X (n x p).

    Returns (AdaptiveWeights, PilotDerivatives, gamma_check).
    """
    config = config or PilotConfig()
    opt_config = opt_config or OptimizerConfig()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != tree.leaf_count:
        raise ValidationError(
            f"pilot features have {X.shape[1]} columns, tree has {tree.leaf_count} leaves"
        )
    gamma_check, _ = fit_leaf_metric(
        X, Y, config, opt_config, seed=seed, threads=threads
    )
    gamma_smooth = oversmooth(gamma_check, config.oversmooth_exponent)
    J = interior_points(X, gamma_smooth, config.interior_fraction)
    derivs = estimate_derivatives(
        X, Y, gamma_smooth, J, method=config.method, threads=threads
    )
    weights = compute_weights(tree, derivs, config, n=X.shape[0])
    return weights, derivs, gamma_check
