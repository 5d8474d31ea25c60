"""Sample-based divergence estimators: k-NN KL and exact empirical W2."""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

W2_MAX_POINTS = 4096


def _as_samples(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"samples must be (m, d), got shape {x.shape}")
    return x


def kl_knn(p, q, k: int = 5, jitter_seed: int = 0) -> float:
    """k-nearest-neighbour estimate of KL(P || Q) from samples.

    Wang, Kulkarni & Verdu (2009):
        D = d/n sum_i log(nu_k(i) / rho_k(i)) + log(m / (n - 1))
    where rho_k is the k-NN distance within the P sample (self excluded) and
    nu_k the k-NN distance to the Q sample.
    """
    p, q = _as_samples(p), _as_samples(q)
    n, m = p.shape[0], q.shape[0]
    if p.shape[1] != q.shape[1]:
        raise ValueError("samples have different dimensions")
    if k < 1 or n < k + 1 or m < k + 1:
        raise ValueError(f"need at least k+1={k + 1} samples per set (got {n}, {m})")
    d = p.shape[1]
    rho, nu = _knn_dists(p, q, k)
    if np.any(rho <= 0) or np.any(nu <= 0):
        warnings.warn("duplicate points in k-NN neighbourhoods; jittering by 1e-12",
                      RuntimeWarning, stacklevel=2)
        rng = np.random.default_rng(jitter_seed)
        p = p + 1e-12 * rng.standard_normal(p.shape)
        q = q + 1e-12 * rng.standard_normal(q.shape)
        rho, nu = _knn_dists(p, q, k)
        if np.any(rho <= 0) or np.any(nu <= 0):
            raise ValueError("degenerate k-NN neighbourhoods (duplicate points)")
    return float(d * np.mean(np.log(nu / rho)) + math.log(m / (n - 1)))


def _knn_dists(p, q, k):
    rho = cKDTree(p).query(p, k=k + 1)[0][:, k]
    nu = cKDTree(q).query(p, k=k)[0]
    nu = nu[:, k - 1] if nu.ndim == 2 else nu
    return rho, nu


def w2_empirical(a, b, method: str = "auto") -> float:
    """Exact W2 between two uniform empirical measures of equal size.

    ``method="assignment"`` solves the optimal assignment on the squared
    Euclidean cost; ``"sorted"`` matches order statistics, which is the exact
    optimum in one dimension.  ``"auto"`` picks ``sorted`` when d = 1.
    """
    a, b = _as_samples(a), _as_samples(b)
    if a.shape != b.shape:
        raise ValueError(f"sample sets must have equal shape, got {a.shape} and {b.shape}")
    if a.shape[0] > W2_MAX_POINTS:
        raise ValueError(f"exact assignment capped at {W2_MAX_POINTS} points, got {a.shape[0]}")
    if method == "auto":
        method = "sorted" if a.shape[1] == 1 else "assignment"
    if method == "sorted":
        if a.shape[1] != 1:
            raise ValueError("the sorted coupling is optimal only in one dimension")
        diff = np.sort(a[:, 0]) - np.sort(b[:, 0])
        return float(math.sqrt(np.mean(diff * diff)))
    if method != "assignment":
        raise ValueError(f"unknown method {method!r}")
    cost = cdist(a, b, metric="sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(math.sqrt(max(cost[rows, cols].mean(), 0.0)))
