"""Seeded, deterministic k-means.

Lloyd's algorithm with greedy k-means++ seeding.  All randomness flows
through numpy's PCG64 generator (``np.random.default_rng``), a named
64-bit PRNG with published reference outputs, so a seed value means the
same thing on every platform.  Centroid updates reduce rows in ascending
index order, which keeps refits bit-identical.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import TooFewSamples

__all__ = [
    "ClusterModel",
    "Assignment",
    "kmeans_fit",
    "assign_nearest",
    "assign_batch",
    "batch_cluster_means",
    "inertia",
]


@dataclass
class ClusterModel:
    """Fitted centroids with the member count behind each one.

    inertia_history is a diagnostic: the objective recorded after each
    Lloyd update, non-increasing from start to convergence.
    """

    centroids: np.ndarray
    counts: np.ndarray
    inertia_history: Optional[list] = None

    @property
    def m(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass
class Assignment:
    """Cluster label and Euclidean distance to that centroid, per row."""

    labels: np.ndarray
    distances: np.ndarray


def _assign_dense(x: np.ndarray, centroids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Labels and squared distances to the assigned centroid.

    Uses the expansion |x-c|^2 = |x|^2 - 2 x.c + |c|^2 so the heavy part
    is one matrix product; negatives from cancellation are clamped to 0.
    Ties take the lowest centroid index (argmin keeps the first hit).
    """
    x2 = np.einsum("ij,ij->i", x, x)
    c2 = np.einsum("ij,ij->i", centroids, centroids)
    d2 = x2[:, None] - 2.0 * (x @ centroids.T) + c2[None, :]
    np.maximum(d2, 0.0, out=d2)
    labels = np.argmin(d2, axis=1).astype(np.int64)
    return labels, d2[np.arange(x.shape[0]), labels]


def _cluster_sums(x: np.ndarray, labels: np.ndarray, m: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-cluster row sums and counts, rows taken in ascending index order."""
    sums = np.zeros((m, x.shape[1]), dtype=np.float64)
    counts = np.bincount(labels, minlength=m).astype(np.int64)
    for j in range(m):
        if counts[j]:
            sums[j] = np.sum(x[labels == j], axis=0)
    return sums, counts


def _kmeanspp_init(x: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++ seeding.

    Each new center is drawn from the squared-distance distribution; of
    2 + floor(log m) sampled candidates the one that lowers the total
    potential most is kept (the greedy variant, which avoids most bad
    local seedings while staying fully seeded and deterministic).
    """
    n = x.shape[0]
    centers = np.empty((m, x.shape[1]), dtype=np.float64)
    x2 = np.einsum("ij,ij->i", x, x)
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = x2 - 2.0 * (x @ centers[0]) + x2[first]
    np.maximum(d2, 0.0, out=d2)
    n_candidates = 2 + int(np.log(m)) if m > 1 else 1
    for j in range(1, m):
        total = float(d2.sum())
        if total <= 0.0:
            # all points coincide with existing centers; any pick works
            centers[j] = x[int(rng.integers(n))]
            continue
        cand = rng.choice(n, size=n_candidates, replace=True, p=d2 / total)
        best_pot = np.inf
        best_d2 = d2
        best = int(cand[0])
        for ci in cand:
            ci = int(ci)
            cd2 = x2 - 2.0 * (x @ x[ci]) + x2[ci]
            np.maximum(cd2, 0.0, out=cd2)
            nd2 = np.minimum(d2, cd2)
            pot = float(nd2.sum())
            if pot < best_pot:
                best_pot, best, best_d2 = pot, ci, nd2
        centers[j] = x[best]
        d2 = best_d2
    return centers


def _repair_empty(
    x: np.ndarray, labels: np.ndarray, d2: np.ndarray, m: int
) -> np.ndarray:
    """Give every empty cluster the point currently farthest from its centroid."""
    counts = np.bincount(labels, minlength=m)
    empties = np.flatnonzero(counts == 0)
    if empties.size == 0:
        return labels
    labels = labels.copy()
    d2 = d2.copy()
    for e in empties:
        far = int(np.argmax(d2))
        labels[far] = e
        d2[far] = -np.inf
    return labels


def kmeans_fit(
    m: np.ndarray,
    n_clusters: int,
    seed: int,
    max_iters: int = 100,
    tol: float = 1e-4,
) -> Tuple[ClusterModel, Assignment]:
    """Fit n_clusters centroids to the rows of m.

    Returns the model and the assignment of every input row against the
    final centroids, so re-running assign_nearest on any row reproduces
    the returned labels exactly.  Iteration stops when the assignment
    stops changing (an exact fixed point: each centroid is then the mean
    of its members) or when the largest centroid movement drops below
    tol, or after max_iters updates.

    Raises TooFewSamples when m has fewer rows than n_clusters.
    """
    x = np.asarray(m, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {x.shape}")
    if n_clusters < 1:
        raise ValueError(f"n_clusters must be >= 1, got {n_clusters}")
    if x.shape[0] < n_clusters:
        raise TooFewSamples(f"{x.shape[0]} samples for {n_clusters} clusters")
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(x, n_clusters, rng)
    pure_labels, d2 = _assign_dense(x, centroids)
    labels = _repair_empty(x, pure_labels, d2, n_clusters)
    history = []

    for _ in range(max_iters):
        # labels is post-repair here so every cluster has members
        sums, counts = _cluster_sums(x, labels, n_clusters)
        new_centroids = sums / counts[:, None]
        history.append(float(np.sum((x - new_centroids[labels]) ** 2)))
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        pure_labels, d2 = _assign_dense(x, centroids)
        repaired = _repair_empty(x, pure_labels, d2, n_clusters)
        if np.array_equal(repaired, labels) or shift < tol:
            break
        labels = repaired

    # the returned assignment is the plain argmin against the final
    # centroids, so assign_nearest reproduces it row for row
    counts = np.bincount(pure_labels, minlength=n_clusters).astype(np.int64)
    model = ClusterModel(centroids=centroids, counts=counts, inertia_history=history)
    # d2 already measures against the final centroids, through the same
    # expansion assign_batch uses, so the two agree bit for bit
    return model, Assignment(labels=pure_labels, distances=np.sqrt(d2))


def _assigned_sq(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> np.ndarray:
    diff = x - centroids[labels]
    return np.einsum("ij,ij->i", diff, diff)


def assign_batch(model: ClusterModel, m: np.ndarray) -> Assignment:
    """Nearest-centroid assignment for every row of m."""
    x = np.asarray(m, dtype=np.float64)
    labels, d2 = _assign_dense(x, model.centroids)
    return Assignment(labels=labels, distances=np.sqrt(d2))


def assign_nearest(model: ClusterModel, f: np.ndarray) -> int:
    """Index of the centroid nearest to f; ties go to the lowest index."""
    f = np.asarray(f, dtype=np.float64)
    labels, _ = _assign_dense(f[None, :], model.centroids)
    return int(labels[0])


def batch_cluster_means(
    m: np.ndarray, labels: np.ndarray, n_clusters: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Mean of each cluster's rows within one batch.

    Returns (means, counts).  A cluster with no rows in the batch has
    count 0 and an all-zero means row; callers must treat count == 0 as
    "absent", never as an actual zero mean.
    """
    x = np.asarray(m, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (x.shape[0],):
        raise ValueError(f"labels shape {labels.shape} does not match {x.shape[0]} rows")
    sums, counts = _cluster_sums(x, labels, n_clusters)
    means = np.zeros_like(sums)
    present = counts > 0
    means[present] = sums[present] / counts[present, None]
    return means, counts


def inertia(m: np.ndarray, model: ClusterModel, assignment: Assignment) -> float:
    """Sum of squared Euclidean distances to each row's assigned centroid."""
    x = np.asarray(m, dtype=np.float64)
    return float(np.sum(_assigned_sq(x, model.centroids, assignment.labels)))
