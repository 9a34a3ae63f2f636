"""Fold-assignment strategies behind one uniform interface.

Every splitter is a pure function of (dataset, parameters, seed) returning a
FoldAssignment. The stratified strategies deal per-class streams through one
global round-robin cursor that carries over between classes (the first class
starts at fold 0), which keeps fold sizes within one of each other and every
fold nonempty whenever n >= k.

Kinds:
  kfold       shuffled near-equal chop
  scv         per-class shuffle, round-robin deal
  scbcv       per-class K-Means, centroid-distance order, round-robin deal
  scbcv_mini  scbcv with mini-batch K-Means
  kcbcv       whole-data K-Means, centroid-distance order (unstratified)
  kcbcv_mini  kcbcv with mini-batch K-Means
  acbcv       whole-data agglomerative clustering (unstratified)
  dbscanbcv   whole-data DBSCAN; noise forms one trailing pseudo-cluster
  dbscv       per-class nearest-neighbor walk, cyclic deal
  dobscv      per-class nearest-neighbor groups filling all k folds at once
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import numpy as np

from .clustering import (
    NOISE,
    ClusteringResult,
    DbscanParams,
    KMeansConfig,
    agglomerative_fit,
    dbscan_fit,
    kmeans_fit,
    minibatch_kmeans_fit,
)
from .data import Dataset
from .util import derive_seed, sq_distances

KFOLD = "kfold"
SCV = "scv"
SCBCV = "scbcv"
SCBCV_MINI = "scbcv_mini"
KCBCV = "kcbcv"
KCBCV_MINI = "kcbcv_mini"
ACBCV = "acbcv"
DBSCANBCV = "dbscanbcv"
DBSCV = "dbscv"
DOBSCV = "dobscv"

ALL_KINDS = (
    KFOLD,
    SCV,
    SCBCV,
    SCBCV_MINI,
    KCBCV,
    KCBCV_MINI,
    ACBCV,
    DBSCANBCV,
    DBSCV,
    DOBSCV,
)
CLUSTER_KINDS = frozenset({SCBCV, SCBCV_MINI, KCBCV, KCBCV_MINI, ACBCV, DBSCANBCV})
KMEANS_KINDS = frozenset({SCBCV, SCBCV_MINI, KCBCV, KCBCV_MINI})


class SplitError(ValueError):
    """A splitter was asked for an impossible fold assignment."""


@dataclass(frozen=True)
class FoldAssignment:
    """A partition of [0, n) into k nonempty folds."""

    k: int
    fold_of: np.ndarray

    def __post_init__(self):
        fold_of = np.asarray(self.fold_of, dtype=np.int64)
        object.__setattr__(self, "fold_of", fold_of)
        if self.k < 1:
            raise SplitError("fold count must be >= 1")
        if fold_of.ndim != 1 or fold_of.size == 0:
            raise SplitError("fold_of must be a nonempty vector")
        if fold_of.min() < 0 or fold_of.max() >= self.k:
            raise SplitError("fold ids must lie in [0, k)")
        if np.unique(fold_of).size != self.k:
            raise SplitError("every fold must be nonempty")

    @property
    def n_instances(self) -> int:
        return self.fold_of.size

    def folds(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.fold_of == j) for j in range(self.k)]


@dataclass(frozen=True)
class SplitterSpec:
    """Which splitter to run and with what parameters.

    cluster_params must be present exactly for the cluster-based kinds:
      scbcv / scbcv_mini / kcbcv / kcbcv_mini: {"k_clusters": int, ["batch_size": int]}
      acbcv: {"n_clusters": int, ["linkage": str]}
      dbscanbcv: {"epsilon": float, "min_samples": int}
    Any cluster_params value may be the string "auto"; the experiment harness
    resolves it per dataset before splitting. k_splits of 0 means "filled in
    later" (configs list splitters once and sweep fold counts separately).
    """

    kind: str
    k_splits: int = 0
    cluster_params: Mapping[str, Any] | None = None
    seed: int = 0
    name: str | None = None

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise SplitError(f"unknown splitter kind {self.kind!r}")
        needs_params = self.kind in CLUSTER_KINDS
        if needs_params and self.cluster_params is None:
            raise SplitError(f"{self.kind} requires cluster_params")
        if not needs_params and self.cluster_params is not None:
            raise SplitError(f"{self.kind} takes no cluster_params")
        if self.cluster_params is not None:
            object.__setattr__(self, "cluster_params", dict(self.cluster_params))

    @property
    def label(self) -> str:
        """Display/grouping name; distinct specs of one kind should differ."""
        if self.name:
            return self.name
        if self.cluster_params:
            inner = ",".join(f"{k}={v}" for k, v in sorted(self.cluster_params.items()))
            return f"{self.kind}[{inner}]"
        return self.kind

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind}
        if self.k_splits:
            out["k_splits"] = self.k_splits
        if self.cluster_params is not None:
            out["cluster_params"] = dict(self.cluster_params)
        if self.seed:
            out["seed"] = self.seed
        if self.name is not None:
            out["name"] = self.name
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SplitterSpec":
        return cls(
            kind=d["kind"],
            k_splits=int(d.get("k_splits", 0)),
            cluster_params=d.get("cluster_params"),
            seed=int(d.get("seed", 0)),
            name=d.get("name"),
        )


def _check_k(n: int, k: int) -> None:
    if k < 1:
        raise SplitError("k must be >= 1")
    if k > n:
        raise SplitError(f"k={k} exceeds the number of instances n={n}")


def _deal(order: np.ndarray, k: int) -> np.ndarray:
    """Round-robin deal: position j of the stream lands in fold j % k."""
    fold_of = np.empty(order.size, dtype=np.int64)
    fold_of[order] = np.arange(order.size) % k
    return fold_of


def split_kfold(ds: Dataset, k: int, seed: int) -> FoldAssignment:
    """Plain K-Fold: a uniform shuffle chopped into k near-equal folds."""
    n = ds.n_instances
    _check_k(n, k)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.repeat(np.arange(k), sizes)
    return FoldAssignment(k, fold_of)


def split_scv(ds: Dataset, k: int, seed: int) -> FoldAssignment:
    """Stratified CV: shuffle within each class, deal round-robin.

    The deal cursor continues across classes, so per-class fold counts differ
    by at most one and fold sizes by at most one overall.
    """
    n = ds.n_instances
    _check_k(n, k)
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    cursor = 0
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == c)
        perm = rng.permutation(idx)
        fold_of[perm] = (cursor + np.arange(idx.size)) % k
        cursor += idx.size
    return FoldAssignment(k, fold_of)


def _class_cluster_order(
    feats: np.ndarray, idx: np.ndarray, cfg: KMeansConfig
) -> np.ndarray:
    """Distance-ordered concatenation of one class's clusters.

    Fits K-Means on the class rows, sorts each cluster's members ascending by
    distance to their centroid (ties by original instance index), and
    concatenates the clusters in cluster-id order.
    """
    fit = minibatch_kmeans_fit if cfg.minibatch else kmeans_fit
    result = fit(feats[idx], cfg)
    chunks = []
    for c in range(result.n_clusters):
        members = np.flatnonzero(result.assignment == c)
        order = np.lexsort((idx[members], result.distances[members]))
        chunks.append(idx[members][order])
    return np.concatenate(chunks)


def split_scbcv(
    ds: Dataset,
    k_splits: int,
    k_clusters: int,
    seed: int,
    minibatch: bool = False,
    batch_size: int = 1024,
    max_iterations: int = 100,
    tolerance: float = 1e-4,
) -> FoldAssignment:
    """Stratified cluster-based CV.

    Per class (in class-id order): fit K-Means — mini-batch when requested —
    with min(k_clusters, class size) centers, sort each cluster ascending by
    distance to its centroid, and concatenate the sorted clusters. The
    concatenated per-class lists form one global stream that is dealt
    round-robin over k_splits folds.
    """
    n = ds.n_instances
    _check_k(n, k_splits)
    if k_splits < 2:
        raise SplitError("k_splits must be >= 2")
    if k_clusters < 1:
        raise SplitError("k_clusters must be >= 1")
    pieces = []
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == c)
        cfg = KMeansConfig(
            k=min(k_clusters, idx.size),
            max_iterations=max_iterations,
            tolerance=tolerance,
            seed=derive_seed(seed, "class", c),
            minibatch=minibatch,
            batch_size=batch_size,
        )
        pieces.append(_class_cluster_order(ds.features, idx, cfg))
    return FoldAssignment(k_splits, _deal(np.concatenate(pieces), k_splits))


def split_cluster_unstratified(
    ds: Dataset, k_splits: int, clustering: ClusteringResult
) -> FoldAssignment:
    """Shared core of the unstratified cluster-based splitters.

    Each cluster's members are sorted ascending by the clustering's stored
    distances (distance to the cluster mean is computed here when the method
    did not store any, as for DBSCAN), clusters are concatenated in id order
    with DBSCAN's noise points trailing as one index-sorted pseudo-cluster,
    and the stream is dealt round-robin.
    """
    n = ds.n_instances
    _check_k(n, k_splits)
    if clustering.assignment.size != n:
        raise SplitError("clustering does not cover the dataset")
    if clustering.n_clusters == 0 and not (clustering.assignment == NOISE).any():
        raise SplitError("empty clustering")
    chunks = []
    for c in range(clustering.n_clusters):
        members = np.flatnonzero(clustering.assignment == c)
        if clustering.distances is not None:
            key = clustering.distances[members]
        else:
            mu = ds.features[members].mean(axis=0)
            key = np.sqrt(((ds.features[members] - mu) ** 2).sum(axis=1))
        chunks.append(members[np.lexsort((members, key))])
    noise = np.flatnonzero(clustering.assignment == NOISE)
    if noise.size:
        chunks.append(noise)
    return FoldAssignment(k_splits, _deal(np.concatenate(chunks), k_splits))


def split_dbscv(ds: Dataset, k: int, seed: int) -> FoldAssignment:
    """Nearest-neighbor walk stratification.

    Per class: start at a seeded-random instance, then repeatedly hop to the
    nearest not-yet-assigned instance of the same class (ties to the lower
    instance index), assigning along the walk to consecutive folds. The fold
    cursor cycles 0..k-1 and carries over between classes.
    """
    n = ds.n_instances
    _check_k(n, k)
    if k < 2:
        raise SplitError("k must be >= 2")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    cursor = 0
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == c)
        d2 = sq_distances(ds.features[idx], ds.features[idx])
        remaining = np.ones(idx.size, dtype=bool)
        at = int(rng.integers(idx.size))
        fold_of[idx[at]] = cursor % k
        cursor += 1
        remaining[at] = False
        for _ in range(idx.size - 1):
            row = np.where(remaining, d2[at], np.inf)
            at = int(np.argmin(row))
            fold_of[idx[at]] = cursor % k
            cursor += 1
            remaining[at] = False
    return FoldAssignment(k, fold_of)


def split_dobscv(ds: Dataset, k: int, seed: int) -> FoldAssignment:
    """Nearest-neighbor group stratification.

    Per class: pick a seeded-random unassigned instance, gather its k-1
    nearest unassigned same-class neighbors, and give the group the k folds
    at once (the picked instance takes fold 0, neighbors take folds 1..k-1
    in ascending distance order, ties to the lower index). When fewer than k
    instances remain in the class, the leftovers are dealt round-robin in
    index order through a cursor shared across classes.
    """
    n = ds.n_instances
    _check_k(n, k)
    if k < 2:
        raise SplitError("k must be >= 2")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    rem_cursor = 0
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == c)
        d2 = sq_distances(ds.features[idx], ds.features[idx])
        pool = np.arange(idx.size)
        while pool.size >= k:
            pick = pool[int(rng.integers(pool.size))]
            others = pool[pool != pick]
            dists = d2[pick, others]
            group = others[np.lexsort((others, dists))[: k - 1]]
            fold_of[idx[pick]] = 0
            fold_of[idx[group]] = np.arange(1, k)
            drop = np.concatenate(([pick], group))
            pool = pool[~np.isin(pool, drop)]
        for p in pool:
            fold_of[idx[p]] = rem_cursor % k
            rem_cursor += 1
    return FoldAssignment(k, fold_of)


def materialize_folds(fa: FoldAssignment) -> list[tuple[np.ndarray, np.ndarray]]:
    """The k (train, test) index pairs: pair j tests on fold j, trains on the rest."""
    pairs = []
    everything = np.arange(fa.n_instances)
    for j in range(fa.k):
        test = everything[fa.fold_of == j]
        train = everything[fa.fold_of != j]
        pairs.append((train, test))
    return pairs


def _required(params: Mapping[str, Any], key: str, kind: str):
    if key not in params:
        raise SplitError(f"{kind} requires cluster_params[{key!r}]")
    value = params[key]
    if value == "auto":
        raise SplitError(
            f"{kind} cluster_params[{key!r}] is 'auto'; resolve it against a dataset first"
        )
    return value


def build_folds(ds: Dataset, spec: SplitterSpec) -> FoldAssignment:
    """Dispatch a SplitterSpec to its splitter (cluster params must be concrete)."""
    k = spec.k_splits
    if spec.kind == KFOLD:
        return split_kfold(ds, k, spec.seed)
    if spec.kind == SCV:
        return split_scv(ds, k, spec.seed)
    if spec.kind in (SCBCV, SCBCV_MINI):
        params = spec.cluster_params or {}
        return split_scbcv(
            ds,
            k,
            int(_required(params, "k_clusters", spec.kind)),
            spec.seed,
            minibatch=spec.kind == SCBCV_MINI,
            batch_size=int(params.get("batch_size", 1024)),
        )
    if spec.kind in (KCBCV, KCBCV_MINI):
        params = spec.cluster_params or {}
        k_clusters = int(_required(params, "k_clusters", spec.kind))
        cfg = KMeansConfig(
            k=min(k_clusters, ds.n_instances),
            seed=spec.seed,
            minibatch=spec.kind == KCBCV_MINI,
            batch_size=int(params.get("batch_size", 1024)),
        )
        fit = minibatch_kmeans_fit if cfg.minibatch else kmeans_fit
        return split_cluster_unstratified(ds, k, fit(ds.features, cfg))
    if spec.kind == ACBCV:
        params = spec.cluster_params or {}
        n_clusters = int(_required(params, "n_clusters", spec.kind))
        result = agglomerative_fit(
            ds.features,
            min(n_clusters, ds.n_instances),
            linkage=params.get("linkage", "average"),
        )
        return split_cluster_unstratified(ds, k, result)
    if spec.kind == DBSCANBCV:
        params = spec.cluster_params or {}
        dbs = DbscanParams(
            epsilon=float(_required(params, "epsilon", spec.kind)),
            min_samples=int(_required(params, "min_samples", spec.kind)),
        )
        return split_cluster_unstratified(ds, k, dbscan_fit(ds.features, dbs))
    if spec.kind == DBSCV:
        return split_dbscv(ds, k, spec.seed)
    if spec.kind == DOBSCV:
        return split_dobscv(ds, k, spec.seed)
    raise SplitError(f"unknown splitter kind {spec.kind!r}")


def with_fold_count(spec: SplitterSpec, k_splits: int) -> SplitterSpec:
    return replace(spec, k_splits=k_splits)
