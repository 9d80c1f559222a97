"""Pure-numpy implementations of the hot kernels."""

import numpy as np


def pairwise_dist(X, Y):
    """Geodesic distance matrix between unit vectors X (n,3) and Y (m,3)."""
    dots = np.clip(X @ Y.T, -1.0, 1.0)
    return np.arccos(dots)


def pairwise_half_dsq(X, Y):
    """Half squared geodesic distance matrix, d(x_i, y_j)^2 / 2."""
    d = pairwise_dist(X, Y)
    return 0.5 * d * d


def min_plus(C, phi):
    """Row-wise minimum of C[i, j] - phi[j] (the d^2/2-transform core)."""
    return np.min(C - phi[None, :], axis=1)


def lse_rows(M):
    """Row-wise log-sum-exp of M, numerically stabilized."""
    mx = np.max(M, axis=1)
    out = mx + np.log(np.sum(np.exp(M - mx[:, None]), axis=1))
    return out
