"""Penalized-objective minimization over nonnegative metrics.

The nonnegative metric gamma is factorized as gamma = u * w with u, w >= 0
(box constraints, enforced by projection inside the search).  Quadratic
penalties kappa_v (u_v^2 + w_v^2) with kappa_v = lambda * what_v / 2 induce,
after minimizing over factorizations of a fixed gamma, exactly the weighted
L1 penalty lambda * sum_v what_v * gamma_v.  Coordinates whose weight what_v
is infinite are pinned at u_v = w_v = 0 and excluded from the search.

The inner solver is limited-memory BFGS with gradient projection onto the
box; restarts draw independent starting points from three spread scales and
the best final objective wins, ties broken by lowest restart index.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import AllRestartsFailed, ValidationError
from .kernels import loocv_gradient
from .util import parallel_map, substream

STRATEGIES = ("smallest", "small", "large")


@dataclass
class OptimizerConfig:
    """Inner-solver knobs: tolerance, iteration cap, quasi-Newton memory."""

    eps: float = 1e-6
    max_iterations: int = 500
    memory: int = 10

    def __post_init__(self):
        if self.eps <= 0:
            raise ValidationError("eps must be positive")


@dataclass
class OptResult:
    x: np.ndarray
    objective: float
    converged: bool
    iterations: int


@dataclass
class SpredState:
    """Factorized metric: gamma = u * w elementwise, both factors >= 0."""

    u: np.ndarray
    w: np.ndarray

    @property
    def gamma(self):
        return self.u * self.w


def draw_init(strategy, size, n, T, rng):
    """One starting vector for the given spread scale, truncated at 1e-6.

    smallest ~ N(0.1, 0.01^2); small ~ N(1, 0.25^2);
    large ~ N(max(1, n^{2/(4+T)}), 1).
    """
    if strategy == "smallest":
        mu, sd = 0.1, 0.01
    elif strategy == "small":
        mu, sd = 1.0, 0.25
    elif strategy == "large":
        mu, sd = max(1.0, float(n) ** (2.0 / (4.0 + T))), 1.0
    else:
        raise ValidationError(f"unknown init strategy {strategy!r}")
    return np.maximum(rng.normal(mu, sd, size), 1e-6)


def snap_gamma(gamma, rel=1e-8):
    """Zero out coordinates below rel * max(1, max gamma)."""
    gamma = np.asarray(gamma, dtype=np.float64)
    thr = rel * max(1.0, float(gamma.max(initial=0.0)))
    return np.where(gamma < thr, 0.0, gamma)


def spred_objective(state, X, Y, lam, what):
    """Penalized objective and its gradients in the two factors.

    objective = L_n(u*w) + sum_v kappa_v (u_v^2 + w_v^2), kappa_v = lam*what_v/2;
    grad_u = dL/dgamma * w + 2 kappa * u, grad_w symmetric.  Pinned coordinates
    (what = inf) contribute nothing and get zero gradient.
    """
    u = np.asarray(state.u, dtype=np.float64)
    w = np.asarray(state.w, dtype=np.float64)
    what = np.asarray(what, dtype=np.float64)
    pinned = ~np.isfinite(what)
    gamma = u * w
    if pinned.any():
        gamma = np.where(pinned, 0.0, gamma)
    rep = loocv_gradient(X, Y, gamma)
    kappa = np.where(pinned, 0.0, lam * what / 2.0)
    objective = rep.loss + float(np.sum(kappa * (u * u + w * w)))
    grad_u = rep.gradient * w + 2.0 * kappa * u
    grad_w = rep.gradient * u + 2.0 * kappa * w
    if pinned.any():
        grad_u[pinned] = 0.0
        grad_w[pinned] = 0.0
    return objective, grad_u, grad_w


def box_minimize(fn, x0, config=None, lower=0.0):
    """L-BFGS-B over the box [lower, inf)^d; fn returns (value, gradient).

    Stops at projected-gradient infinity norm <= eps or relative objective
    decrease <= eps.  On iteration cap or line-search failure the best point
    found so far is returned with converged = False.
    """
    config = config or OptimizerConfig()
    x0 = np.asarray(x0, dtype=np.float64)
    res = minimize(
        fn,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=[(lower, None)] * x0.size,
        options={
            "maxcor": config.memory,
            "ftol": config.eps,
            "gtol": config.eps,
            "maxiter": config.max_iterations,
        },
    )
    return OptResult(
        x=np.asarray(res.x, dtype=np.float64),
        objective=float(res.fun),
        converged=bool(res.status == 0),
        iterations=int(res.nit),
    )


def spred_run(X, Y, lam, what, u0, w0, config=None):
    """One box search of the factorized objective from an explicit start.

    Pinned coordinates are forced to zero before and after the search.
    Returns (SpredState, objective, converged, iterations).
    """
    what = np.asarray(what, dtype=np.float64)
    pinned = ~np.isfinite(what)
    u0 = np.where(pinned, 0.0, np.asarray(u0, dtype=np.float64))
    w0 = np.where(pinned, 0.0, np.asarray(w0, dtype=np.float64))
    T = u0.size

    def packed(x):
        state = SpredState(u=x[:T], w=x[T:])
        f, gu, gw = spred_objective(state, X, Y, lam, what)
        return f, np.concatenate([gu, gw])

    res = box_minimize(packed, np.concatenate([u0, w0]), config)
    u = np.where(pinned, 0.0, res.x[:T])
    w = np.where(pinned, 0.0, res.x[T:])
    return SpredState(u=u, w=w), res.objective, res.converged, res.iterations


def gamma_run(X, Y, gamma0, config=None):
    """Unpenalized LOOCV minimization directly over gamma >= 0."""

    def fn(g):
        rep = loocv_gradient(X, Y, g)
        return rep.loss, rep.gradient

    return box_minimize(fn, gamma0, config)


def restart_search(run_one, R, seed, threads=None, strategies=STRATEGIES):
    """Best-of-R search over independently seeded runs.

    run_one(restart_index, strategy, rng) -> OptResult.  Restart r uses
    strategies[r % len(strategies)] and the seed-derived stream for r, so the
    result is a pure function of (seed, R) whatever the execution order.
    Ties in the final objective break toward the lowest restart index.
    """
    if R < 1:
        raise ValidationError("restart count must be >= 1")

    def task(r):
        rng = substream(seed, "restart", r)
        strategy = strategies[r % len(strategies)]
        try:
            out = run_one(r, strategy, rng)
        except Exception:  # a failed restart only disqualifies itself
            return None
        if out is None or not np.isfinite(out.objective):
            return None
        return out

    results = parallel_map(task, range(R), threads=threads)
    best_idx, best = None, None
    for r, out in enumerate(results):
        if out is None:
            continue
        if best is None or out.objective < best.objective:
            best_idx, best = r, out
    if best is None:
        raise AllRestartsFailed(f"all {R} restarts failed to produce a finite objective")
    return best, best_idx
