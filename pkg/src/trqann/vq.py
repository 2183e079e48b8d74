"""Flat vector quantization: k-means codebooks, assignment and distortion."""

from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix, pairwise_sq_dist

__all__ = [
    "Codebook",
    "assign",
    "nearest",
    "mse",
    "kmeans_pp_init",
    "lloyd",
    "train_kmeans",
    "child_seed",
]

_CHUNK_ELEMS = 1 << 22


@dataclass
class Codebook:
    """``k`` centroids of dimension ``dim`` stored as a ``(k, dim)`` array."""

    centroids: np.ndarray

    def __post_init__(self):
        self.centroids = as_matrix(self.centroids, "centroids")
        if self.centroids.shape[0] < 1:
            raise ValueError("codebook needs at least one centroid")

    @property
    def k(self):
        return self.centroids.shape[0]

    @property
    def dim(self):
        return self.centroids.shape[1]


def child_seed(seed, index):
    """Deterministic sub-seed for stage ``index``; stage 0 reuses ``seed``."""
    if index == 0:
        return seed
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def _centroids(cb):
    return cb.centroids if isinstance(cb, Codebook) else np.asarray(cb, dtype=np.float64)


def nearest(data, centroids):
    """Nearest centroid per row (ties to the lowest index) and its squared distance."""
    data = np.asarray(data, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    if data.ndim != 2 or centroids.ndim != 2 or data.shape[1] != centroids.shape[1]:
        raise ValueError(
            f"dimension mismatch: data {data.shape} vs centroids {centroids.shape}"
        )
    n = data.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n)
    step = max(1, _CHUNK_ELEMS // max(1, centroids.shape[0]))
    for lo in range(0, n, step):
        d = pairwise_sq_dist(data[lo:lo + step], centroids)
        lab = np.argmin(d, axis=1)
        labels[lo:lo + step] = lab
        dists[lo:lo + step] = d[np.arange(len(lab)), lab]
    return labels, dists


def assign(data, cb):
    """Label of the nearest centroid for every row of ``data``."""
    return nearest(data, _centroids(cb))[0]


def mse(data, cb, labels):
    """Mean squared distance between each row and its assigned centroid."""
    data = np.asarray(data, dtype=np.float64)
    c = _centroids(cb)
    labels = np.asarray(labels)
    if data.ndim != 2 or data.shape[1] != c.shape[1] or labels.shape != (data.shape[0],):
        raise ValueError(
            f"inconsistent shapes: data {data.shape}, centroids {c.shape}, labels {labels.shape}"
        )
    if data.shape[0] == 0:
        return 0.0
    diff = data - c[labels]
    return float(np.einsum("ij,ij->", diff, diff) / data.shape[0])


def kmeans_pp_init(data, k, rng):
    """k-means++ seeding. Returns a ``(k, D)`` array of data rows."""
    n = data.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    closest = pairwise_sq_dist(data, data[chosen[0]][None, :])[:, 0]
    for i in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            # every point already coincides with a center
            free = np.setdiff1d(np.arange(n), chosen[:i])
            idx = free[rng.integers(len(free))]
        chosen[i] = idx
        np.minimum(closest, pairwise_sq_dist(data, data[idx][None, :])[:, 0], out=closest)
    return data[chosen].copy()


def _cluster_means(data, labels, k):
    counts = np.bincount(labels, minlength=k)
    sums = np.empty((k, data.shape[1]))
    for d in range(data.shape[1]):
        sums[:, d] = np.bincount(labels, weights=data[:, d], minlength=k)
    return sums, counts


def update_centroids(data, labels, centroids, respawn=True):
    """Centroid step of Lloyd's algorithm.

    Empty centroids are either respawned at the points with the largest
    current error (``respawn=True``) or left in place.
    """
    k = centroids.shape[0]
    sums, counts = _cluster_means(data, labels, k)
    new = centroids.copy()
    filled = counts > 0
    new[filled] = sums[filled] / counts[filled, None]
    empty = np.flatnonzero(~filled)
    if respawn and len(empty):
        diff = data - new[labels]
        err = np.einsum("ij,ij->i", diff, diff)
        worst = np.argsort(-err, kind="stable")[: len(empty)]
        new[empty[: len(worst)]] = data[worst]
    return new


def lloyd(data, centroids, max_iters=100, tol=1e-6):
    """Lloyd iterations from ``centroids``.

    Returns ``(centroids, labels, trace)``. ``trace[0]`` is the distortion of
    the starting codebook under nearest assignment; each later entry is the
    distortion after one (assign, update) pair, so the trace never increases.
    ``labels`` is the nearest assignment to the returned centroids.
    """
    centroids = np.array(centroids, dtype=np.float64)
    n = data.shape[0]
    labels, dists = nearest(data, centroids)
    trace = [float(dists.sum() / n)]
    prev_labels = None
    for _ in range(max_iters):
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        centroids = update_centroids(data, labels, centroids)
        cur = mse(data, centroids, labels)
        prev = trace[-1]
        trace.append(cur)
        prev_labels = labels
        labels, dists = nearest(data, centroids)
        if prev <= 0 or (prev - cur) < tol * prev:
            break
    return centroids, labels, trace


def train_kmeans(data, k, max_iters=100, seed=0, tol=1e-6):
    """Train a ``k``-centroid codebook with k-means++ seeding and Lloyd steps.

    Returns ``(Codebook, labels, mse)`` where ``mse`` is measured with the
    returned labels (nearest assignment to the final centroids).
    """
    data = as_matrix(data, "data")
    n = data.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k must satisfy 1 <= k <= N, got k={k}, N={n}")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    rng = np.random.default_rng(seed)
    init = kmeans_pp_init(data, k, rng)
    centroids, labels, _ = lloyd(data, init, max_iters=max_iters, tol=tol)
    cb = Codebook(centroids)
    return cb, labels, mse(data, cb, labels)
