"""K-Means with k-means++ seeding, and farthest-point sampling."""

from __future__ import annotations

import numpy as np

from .errors import ClusterCountExceedsPoints


def _sq_dist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(-1)


def kmeans_pp_init(X: np.ndarray, M: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(1)
    for _ in range(1, M):
        total = d2.sum()
        if total <= 0.0:
            # every point coincides with a chosen center
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(1))
    return np.array(centers)


def kmeans(features, M: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6):
    """
    Lloyd's algorithm from k-means++ seeds.

    Returns ``(assignments, centers)``. Empty clusters are re-seeded with the
    point lying farthest from its current center. Deterministic for a fixed
    ``seed``.
    """
    X = np.asarray(features, float)
    if X.ndim == 1:
        X = X[:, None]
    n = len(X)
    if n < 1 or M < 1:
        raise ValueError("kmeans needs at least one point and one cluster")
    if M > n:
        raise ClusterCountExceedsPoints(f"{M} clusters requested for {n} points")
    rng = np.random.default_rng(seed)
    C = kmeans_pp_init(X, M, rng)
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = _sq_dist(X, C)
        assign = np.argmin(d2, axis=1)
        newC = C.copy()
        for m in range(M):
            members = assign == m
            if members.any():
                newC[m] = X[members].mean(0)
        for m in range(M):
            if not np.any(assign == m):
                far = int(np.argmax(d2[np.arange(n), assign]))
                newC[m] = X[far]
                assign[far] = m
                d2[far, :] = 0.0
        shift = np.sqrt(((newC - C) ** 2).sum(1)).max()
        C = newC
        if shift < tol:
            break
    assign = np.argmin(_sq_dist(X, C), axis=1)
    for m in range(M):
        members = assign == m
        if members.any():
            C[m] = X[members].mean(0)
    return assign, C


def farthest_point_sampling(points, count: int, seed: int = 0) -> np.ndarray:
    """Indices of ``count`` points chosen greedily to maximize coverage."""
    P = np.asarray(points, float)
    n = len(P)
    count = min(count, n)
    if count <= 0:
        return np.zeros(0, dtype=np.int64)
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    d2 = ((P - P[chosen[0]]) ** 2).sum(1)
    for _ in range(1, count):
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((P - P[nxt]) ** 2).sum(1))
    return np.array(chosen, dtype=np.int64)


def knn_median_radius(positions, k: int = 3, fallback: float = 1.0) -> np.ndarray:
    """Per point, the median distance to its ``k`` nearest other points."""
    P = np.asarray(positions, float)
    n = len(P)
    if n < 2:
        return np.full(n, fallback)
    d = np.sqrt(_sq_dist(P, P))
    np.fill_diagonal(d, np.inf)
    d.sort(axis=1)
    r = np.median(d[:, :min(k, n - 1)], axis=1)
    return np.where(r > 0, r, fallback)
