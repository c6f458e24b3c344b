"""Small statistics helpers shared by the Monte Carlo estimators."""

import math

import numpy as np


def batched_se(x, n_batches=None):
    """Standard error of the mean from contiguous batch means.

    The default uses ``floor(sqrt(M))`` batches, which absorbs heavy tails
    and mild dependence better than the naive formula.
    """
    x = np.asarray(x, dtype=float)
    M = x.size
    if M < 2:
        return math.nan
    b = n_batches or max(2, math.isqrt(M))
    b = min(b, M)
    means = np.array([c.mean() for c in np.array_split(x, b)])
    if np.all(means == means[0]):
        return 0.0
    return float(means.std(ddof=1) / math.sqrt(b))


def mean_of_exp(logw):
    """Mean of ``exp(logw)`` along the last axis, returned in log space."""
    logw = np.asarray(logw, dtype=float)
    mx = np.max(logw, axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    return np.log(np.mean(np.exp(logw - mx), axis=-1)) + mx[..., 0]
