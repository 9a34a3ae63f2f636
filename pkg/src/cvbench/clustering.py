"""Clustering kernels and hyperparameter estimation.

All kernels run on plain float64 matrices and are pure functions of
(inputs, seed): K-Means (Lloyd iterations from k-means++ seeding), its
mini-batch variant with streaming per-center means, DBSCAN, and bottom-up
agglomerative merging under a selectable linkage. Distances are Euclidean
throughout.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Dataset
from .util import sq_distances

NOISE = -1

LINKAGES = ("single", "complete", "average")


@dataclass(frozen=True)
class KMeansConfig:
    """Settings for kmeans_fit / minibatch_kmeans_fit.

    tolerance is the stop threshold: fraction of points changing assignment
    between Lloyd iterations, or total center shift for the mini-batch
    variant. batch_size only applies when minibatch is set.
    """

    k: int
    max_iterations: int = 100
    tolerance: float = 1e-4
    seed: int = 0
    minibatch: bool = False
    batch_size: int = 1024

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be a positive integer")
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be a positive integer")


@dataclass(frozen=True)
class DbscanParams:
    """DBSCAN neighborhood radius and core-point threshold."""

    epsilon: float
    min_samples: int

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError("epsilon must be finite and positive")
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")


@dataclass(frozen=True)
class ClusteringResult:
    """Cluster id per instance, plus centroids/distances where defined.

    Non-noise ids form the contiguous range [0, n_clusters); NOISE (-1) only
    appears for DBSCAN. When centroids are present, distances[i] is the
    Euclidean distance from instance i to centroids[assignment[i]].
    """

    assignment: np.ndarray
    centroids: np.ndarray | None = None
    distances: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "assignment", np.asarray(self.assignment, dtype=np.int64)
        )

    @property
    def n_clusters(self) -> int:
        mask = self.assignment != NOISE
        return int(self.assignment[mask].max()) + 1 if mask.any() else 0


def _kmeanspp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: D^2-weighted draws after a uniform first center."""
    n = X.shape[0]
    chosen = np.zeros(n, dtype=bool)
    centers = np.empty((k, X.shape[1]))
    first = int(rng.integers(n))
    centers[0] = X[first]
    chosen[first] = True
    closest = sq_distances(X, centers[:1])[:, 0]
    for j in range(1, k):
        total = float(closest.sum())
        if total > 0.0:
            target = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(closest), target, side="right"))
            idx = min(idx, n - 1)
        else:
            # all remaining mass is on already-chosen points (duplicates):
            # fall back to the lowest unchosen index
            idx = int(np.flatnonzero(~chosen)[0])
        centers[j] = X[idx]
        chosen[idx] = True
        closest = np.minimum(closest, sq_distances(X, centers[j : j + 1])[:, 0])
    return centers


def _repair_empty(assignment: np.ndarray, d2_own: np.ndarray, k: int) -> None:
    """Keep all k clusters populated: move the globally farthest point (from a
    cluster that can spare one) into each empty cluster."""
    sizes = np.bincount(assignment, minlength=k)
    for c in range(k):
        if sizes[c] > 0:
            continue
        movable = sizes[assignment] > 1
        if not movable.any():
            continue
        scores = np.where(movable, d2_own, -np.inf)
        j = int(np.argmax(scores))
        sizes[assignment[j]] -= 1
        assignment[j] = c
        sizes[c] += 1


def _validate_matrix(X: np.ndarray, k: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a nonempty 2-d matrix")
    if not np.isfinite(X).all():
        raise ValueError("X must not contain NaN or Inf")
    if k > X.shape[0]:
        raise ValueError(f"k={k} exceeds the number of instances n={X.shape[0]}")
    return X


def kmeans_fit(
    X: np.ndarray,
    cfg: KMeansConfig,
    trace: Callable[[int, float], None] | None = None,
) -> ClusteringResult:
    """Lloyd's K-Means from a k-means++ start.

    Iterates assign/update until the fraction of points changing cluster drops
    below cfg.tolerance (or no point moves, or max_iterations). Empty clusters
    are repaired by donating the farthest point, so all k survive. The trace
    hook, when given, receives (iteration, inertia) after each assignment step.
    """
    X = _validate_matrix(X, cfg.k)
    n = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    centers = _kmeanspp_init(X, cfg.k, rng)
    prev = None
    for it in range(cfg.max_iterations):
        d2 = sq_distances(X, centers)
        assignment = d2.argmin(axis=1)
        own = d2[np.arange(n), assignment]
        _repair_empty(assignment, own, cfg.k)
        if trace is not None:
            trace(it, float(d2[np.arange(n), assignment].sum()))
        for c in range(cfg.k):
            centers[c] = X[assignment == c].mean(axis=0)
        if prev is not None:
            changed = int((assignment != prev).sum())
            if changed == 0 or changed / n < cfg.tolerance:
                prev = assignment
                break
        prev = assignment
    d2 = sq_distances(X, centers)
    assignment = d2.argmin(axis=1)
    _repair_empty(assignment, d2[np.arange(n), assignment], cfg.k)
    distances = np.sqrt(d2[np.arange(n), assignment])
    return ClusteringResult(assignment, centers, distances)


def minibatch_kmeans_fit(
    X: np.ndarray,
    cfg: KMeansConfig,
    trace: Callable[[int, float], None] | None = None,
) -> ClusteringResult:
    """Mini-batch K-Means with per-center streaming means.

    Each iteration assigns a random batch of min(batch_size, n) points (drawn
    without replacement) to the nearest centers and moves every touched center
    toward the batch mean with learning rate 1/count, where count accumulates
    the points the center has absorbed. Stops when the total center shift
    falls below cfg.tolerance. A final full-data pass fills the assignment;
    centers left empty by that pass are dropped and ids compacted.
    """
    X = _validate_matrix(X, cfg.k)
    n = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    centers = _kmeanspp_init(X, cfg.k, rng)
    counts = np.zeros(cfg.k)
    batch = min(cfg.batch_size, n)
    for it in range(cfg.max_iterations):
        members = rng.choice(n, size=batch, replace=False)
        B = X[members]
        assign = sq_distances(B, centers).argmin(axis=1)
        old = centers.copy()
        for c in np.unique(assign):
            rows = B[assign == c]
            counts[c] += len(rows)
            centers[c] += (rows.sum(axis=0) - len(rows) * centers[c]) / counts[c]
        shift = float(np.sqrt(((centers - old) ** 2).sum()))
        if trace is not None:
            trace(it, shift)
        if shift < cfg.tolerance:
            break
    d2 = sq_distances(X, centers)
    assignment = d2.argmin(axis=1)
    distances = np.sqrt(d2[np.arange(n), assignment])
    used = np.unique(assignment)
    if used.size < cfg.k:
        remap = np.full(cfg.k, -1, dtype=np.int64)
        remap[used] = np.arange(used.size)
        assignment = remap[assignment]
        centers = centers[used]
    return ClusteringResult(assignment, centers, distances)


def dbscan_fit(X: np.ndarray, params: DbscanParams) -> ClusteringResult:
    """Density clustering: core points, their border points, and NOISE.

    A point is core when at least min_samples points (itself included) lie
    within epsilon. Clusters are the connected components of the core points;
    a non-core point joins the cluster of its nearest core point when that
    core is within epsilon, and is NOISE otherwise. Cluster ids follow the
    scan order of the lowest core index, so the result is deterministic for a
    fixed instance order.
    """
    X = _validate_matrix(X, 1)
    n = X.shape[0]
    eps2 = params.epsilon**2
    d2 = sq_distances(X, X)
    neighbors = d2 <= eps2
    core = neighbors.sum(axis=1) >= params.min_samples
    labels = np.full(n, NOISE, dtype=np.int64)
    cid = 0
    for i in range(n):
        if not core[i] or labels[i] != NOISE:
            continue
        frontier = np.zeros(n, dtype=bool)
        frontier[i] = True
        labels[i] = cid
        while frontier.any():
            reach = neighbors[frontier].any(axis=0) & core & (labels == NOISE)
            labels[reach] = cid
            frontier = reach
        cid += 1
    if core.any():
        core_idx = np.flatnonzero(core)
        for j in np.flatnonzero(~core):
            to_cores = d2[j, core_idx]
            nearest = int(np.argmin(to_cores))  # ties: lowest core index
            if to_cores[nearest] <= eps2:
                labels[j] = labels[core_idx[nearest]]
    return ClusteringResult(labels)


def _merge_sequence(
    X: np.ndarray, linkage: str = "average"
) -> tuple[list[tuple[int, int]], np.ndarray]:
    """Bottom-up merge order all the way to a single cluster.

    Returns (merges, dists): step t merged the clusters seated at slots
    merges[t] = (i, j) with i < j (slot j folds into slot i; slots are
    original instance indices) at linkage distance dists[t]. Average linkage
    uses the Lance-Williams size-weighted update; exact distance ties resolve
    to the first (row, col) pair in scan order.
    """
    if linkage not in LINKAGES:
        raise ValueError(f"unknown linkage {linkage!r}")
    n = X.shape[0]
    work = np.sqrt(sq_distances(X, X))
    np.fill_diagonal(work, np.inf)
    sizes = np.ones(n)
    merges: list[tuple[int, int]] = []
    dists = np.empty(n - 1)
    for step in range(n - 1):
        flat = int(np.argmin(work))
        i, j = divmod(flat, n)
        if i > j:
            i, j = j, i
        dists[step] = work[i, j]
        if linkage == "average":
            row = (sizes[i] * work[i] + sizes[j] * work[j]) / (sizes[i] + sizes[j])
        elif linkage == "single":
            row = np.minimum(work[i], work[j])
        else:
            row = np.maximum(work[i], work[j])
        work[i, :] = row
        work[:, i] = row
        work[i, i] = np.inf
        work[j, :] = np.inf
        work[:, j] = np.inf
        sizes[i] += sizes[j]
        merges.append((i, j))
    return merges, dists


def _labels_at(n: int, merges: list[tuple[int, int]], n_clusters: int) -> np.ndarray:
    """Replay the first n - n_clusters merges; ids ordered by smallest member."""
    parent = list(range(n))

    def find(a: int) -> int:
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    for i, j in merges[: n - n_clusters]:
        parent[find(j)] = find(i)
    roots = np.array([find(a) for a in range(n)])
    order = {}
    labels = np.empty(n, dtype=np.int64)
    for a in range(n):
        if roots[a] not in order:
            order[roots[a]] = len(order)
        labels[a] = order[roots[a]]
    return labels


def agglomerative_fit(
    X: np.ndarray, n_clusters: int, linkage: str = "average"
) -> ClusteringResult:
    """Merge bottom-up under the given linkage until n_clusters remain.

    No centroids are defined for this method; distances hold each instance's
    Euclidean distance to its own cluster's mean, which downstream fold
    ordering uses.
    """
    X = _validate_matrix(X, n_clusters)
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    n = X.shape[0]
    merges, _ = _merge_sequence(X, linkage)
    labels = _labels_at(n, merges, n_clusters)
    distances = np.empty(n)
    for c in range(n_clusters):
        members = np.flatnonzero(labels == c)
        mu = X[members].mean(axis=0)
        distances[members] = np.sqrt(((X[members] - mu) ** 2).sum(axis=1))
    return ClusteringResult(labels, None, distances)


def _gap_candidate(dists: np.ndarray, ratio_threshold: float) -> int:
    """Cluster-count candidate from a merge-distance sequence.

    Scans the merges in order and cuts at the first jump where the next merge
    distance exceeds ratio_threshold times the current one (near-zero current
    distances are skipped: duplicates merge at distance ~0 and any positive
    successor would trigger a spurious cut). No jump means one cluster.
    """
    n_samples = dists.size + 1
    for m in range(1, dists.size):
        if dists[m - 1] > 1e-9 and dists[m] / dists[m - 1] > ratio_threshold:
            return n_samples - m
    return 1


def estimate_cluster_count(
    ds: Dataset,
    seed: int,
    repeats: int = 10,
    sample_size: int = 100,
    ratio_threshold: float = 1.5,
    clamp: tuple[int, int] = (2, 7),
    linkage: str = "average",
) -> int:
    """Estimate a cluster count from repeated hierarchical runs on samples.

    Each repeat draws a random sample, records the agglomerative merge
    distances, and reads a candidate count off the first large gap between
    successive merge distances. Returns the (lower) median candidate clamped
    to the given range.
    """
    n = ds.n_instances
    if n < 10:
        raise ValueError("dataset too small to estimate a cluster count (n < 10)")
    rng = np.random.default_rng(seed)
    candidates = []
    for _ in range(repeats):
        idx = np.sort(rng.choice(n, size=min(sample_size, n), replace=False))
        _, dists = _merge_sequence(ds.features[idx], linkage)
        candidates.append(_gap_candidate(dists, ratio_threshold))
    candidates.sort()
    median = candidates[(len(candidates) - 1) // 2]
    return int(np.clip(median, clamp[0], clamp[1]))


def _knee_epsilon(curve: np.ndarray) -> float:
    """Knee of a descending curve: max perpendicular deviation from the chord.

    Both axes are normalized to [0, 1] first. A knee at an endpoint (e.g. an
    exactly linear curve) falls back to the median value.
    """
    curve = np.asarray(curve, dtype=np.float64)
    m = curve.size
    span = curve[0] - curve[-1]
    if m < 3 or span <= 0:
        return float(np.median(curve))
    x = np.arange(m) / (m - 1)
    y = (curve - curve[-1]) / span
    deviation = np.abs(y - (1.0 - x))
    knee = int(np.argmax(deviation))
    if knee == 0 or knee == m - 1:
        return float(np.median(curve))
    return float(curve[knee])


def estimate_dbscan_params(ds: Dataset) -> DbscanParams:
    """min_samples = 2 * n_features; epsilon from the k-distance curve knee.

    The curve plots each point's distance to its (min_samples - 1)-th nearest
    neighbor in descending order; epsilon is the curve value at the knee
    (median k-distance when the knee degenerates to an endpoint).
    """
    n, d = ds.features.shape
    min_samples = 2 * d
    if n <= min_samples:
        raise ValueError(
            f"need more than 2 * n_features = {min_samples} rows to estimate DBSCAN parameters"
        )
    dmat = np.sqrt(sq_distances(ds.features, ds.features))
    kth = np.sort(dmat, axis=1)[:, min_samples - 1]  # column 0 is the point itself
    curve = np.sort(kth)[::-1]
    epsilon = _knee_epsilon(curve)
    if epsilon <= 0:
        epsilon = float(np.median(curve))
    if epsilon <= 0:
        raise ValueError("k-distance curve is degenerate (all distances zero)")
    return DbscanParams(epsilon, min_samples)
