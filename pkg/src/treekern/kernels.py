"""Anisotropic kernels, Nadaraya-Watson prediction, and the leave-one-out
cross-validation loss with its exact analytic gradient.

The loss for metric gamma over features X (n rows) and responses Y is

    L(gamma) = (1/n) sum_i (Y_i - mhat_{-i})^2,
    mhat_{-i} = sum_{j!=i} w_ij Y_j / sum_{j!=i} w_ij,
    w_ij = exp(-sum_v gamma_v (X_iv - X_jv)^2).

Its gradient in gamma_k is assembled from the same weight matrix:

    dL/dgamma_k = (2/n) sum_i (Y_i - mhat_{-i}) *
                  [sum_{j!=i} w_ij (Y_j - mhat_{-i}) d2_ijk] / sum_{j!=i} w_ij

with d2_ijk = (X_ik - X_jk)^2.  Everything is evaluated through n x n and
n x T matrix products, never a per-coordinate pair loop, and the exponent
only touches the support of gamma.

A row whose leave-one-out denominator underflows to zero falls back to
the unweighted leave-one-out mean for its residual, contributes zero
gradient (the fallback does not depend on gamma), and is flagged.
"""

from dataclasses import dataclass

import numpy as np

from .errors import TooFewSamples, ValidationError, ZeroDenominator

KERNELS = ("gaussian", "epanechnikov")


@dataclass
class LossReport:
    """Loss value, optional gradient, per-point residuals, underflow flags."""

    loss: float
    gradient: np.ndarray | None
    residuals: np.ndarray
    underflow: np.ndarray

    @property
    def underflow_count(self):
        return int(self.underflow.sum())


def gaussian_kernel(a, b, gamma):
    """exp(-sum_v gamma_v (a_v - b_v)^2); 1 at coincident points."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    return float(np.exp(-np.dot(gamma, (a - b) ** 2)))


def epanechnikov_kernel(a, b, gamma):
    """(1 - s) on s <= 1 and 0 beyond, with s the gamma-weighted squared distance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    s = float(np.dot(gamma, (a - b) ** 2))
    return 1.0 - s if s <= 1.0 else 0.0


def _sq_dist_weighted(Xa, Xb, gamma):
    # sum_v gamma_v (Xa_iv - Xb_jv)^2 for all (i, j), touching only the
    # support of gamma.  Negative entries are handled through a second
    # matmul so finite-difference probes across 0 remain exact.
    gamma = np.asarray(gamma, dtype=np.float64)

    def one_sided(mask, sign):
        g = sign * gamma[mask]
        Za = Xa[:, mask] * np.sqrt(g)
        Zb = Xb[:, mask] * np.sqrt(g)
        sa = np.einsum("ij,ij->i", Za, Za)
        sb = np.einsum("ij,ij->i", Zb, Zb)
        E = sa[:, None] + sb[None, :] - 2.0 * (Za @ Zb.T)
        np.maximum(E, 0.0, out=E)  # clip matmul round-off below zero
        return E

    pos = gamma > 0
    neg = gamma < 0
    E = one_sided(pos, 1.0) if pos.any() else np.zeros((Xa.shape[0], Xb.shape[0]))
    if neg.any():
        E = E - one_sided(neg, -1.0)
    return E


def _weights(Xa, Xb, gamma, kernel):
    E = _sq_dist_weighted(Xa, Xb, gamma)
    if kernel == "gaussian":
        return np.exp(-E)
    if kernel == "epanechnikov":
        return np.where(E <= 1.0, 1.0 - E, 0.0)
    raise ValidationError(f"unknown kernel {kernel!r}")


def pairwise_weights(Xa, Xb, gamma, kernel="gaussian"):
    """Kernel weight matrix between two sample sets (len(Xa) x len(Xb))."""
    Xa = np.atleast_2d(np.asarray(Xa, dtype=np.float64))
    Xb = np.atleast_2d(np.asarray(Xb, dtype=np.float64))
    if Xa.shape[1] != Xb.shape[1]:
        raise ValidationError(
            f"row sets have {Xa.shape[1]} and {Xb.shape[1]} features"
        )
    return _weights(Xa, Xb, gamma, kernel)


def nw_predict(x0, X_train, Y_train, gamma, kernel="gaussian"):
    """Nadaraya-Watson prediction at a single query point.

    Raises ZeroDenominator when every training weight vanishes.
    """
    x0 = np.asarray(x0, dtype=np.float64).reshape(1, -1)
    pred, flag = nw_predict_batch(x0, X_train, Y_train, gamma, kernel, fallback=False)
    if flag[0]:
        raise ZeroDenominator("all kernel weights underflowed at the query point")
    return float(pred[0])


def nw_predict_batch(Xq, X_train, Y_train, gamma, kernel="gaussian", fallback=True):
    """Predictions at many query points.

    Returns (predictions, zero_denominator_flags).  Flagged rows hold the
    training mean when ``fallback`` is true and NaN otherwise.
    """
    Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
    X_train = np.atleast_2d(np.asarray(X_train, dtype=np.float64))
    Y_train = np.asarray(Y_train, dtype=np.float64)
    if Xq.shape[1] != X_train.shape[1]:
        raise ValidationError(
            f"query has {Xq.shape[1]} features, training data {X_train.shape[1]}"
        )
    W = _weights(Xq, X_train, gamma, kernel)
    denom = W.sum(axis=1)
    bad = denom <= 0.0
    safe = np.where(bad, 1.0, denom)
    pred = (W @ Y_train) / safe
    if bad.any():
        pred[bad] = float(Y_train.mean()) if fallback else np.nan
    return pred, bad


def _loo_parts(X, Y, gamma, kernel):
    n = X.shape[0]
    if n < 2:
        raise TooFewSamples("leave-one-out loss needs n >= 2")
    W = _weights(X, X, gamma, kernel)
    np.fill_diagonal(W, 0.0)
    S = W.sum(axis=1)
    bad = S <= 0.0
    safe_S = np.where(bad, 1.0, S)
    mhat = (W @ Y) / safe_S
    if bad.any():
        # unweighted leave-one-out mean for underflowed rows
        mhat[bad] = (Y.sum() - Y[bad]) / (n - 1)
    resid = Y - mhat
    return W, safe_S, mhat, resid, bad


def loocv_loss(X, Y, gamma, kernel="gaussian"):
    """Leave-one-out CV loss of the NW estimator; no gradient."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64)
    _, _, _, resid, bad = _loo_parts(X, Y, gamma, kernel)
    return LossReport(
        loss=float(np.mean(resid**2)), gradient=None, residuals=resid, underflow=bad
    )


def loocv_gradient(X, Y, gamma, kernel="gaussian"):
    """Loss plus its exact gradient in gamma (Gaussian kernel only)."""
    if kernel != "gaussian":
        raise ValidationError("analytic gradient is defined for the gaussian kernel")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64)
    n = X.shape[0]
    W, S, mhat, resid, bad = _loo_parts(X, Y, gamma, kernel)

    # M_ij = resid_i * (W_ij / S_i) * (Y_j - mhat_i); normalizing W first keeps
    # every entry in [0, 1] even when S_i is denormal.  Fully underflowed rows
    # have an all-zero W row (S was masked to 1) so they drop out by themselves;
    # their fallback residual is flat in gamma.
    M = W / S[:, None]
    M *= Y[None, :] - mhat[:, None]
    M *= resid[:, None]

    X2 = X * X
    row = M.sum(axis=1)
    col = M.sum(axis=0)
    cross = np.einsum("ik,ik->k", M @ X, X)
    grad = (2.0 / n) * ((row + col) @ X2 - 2.0 * cross)
    return LossReport(
        loss=float(np.mean(resid**2)), gradient=grad, residuals=resid, underflow=bad
    )
