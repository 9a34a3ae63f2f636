"""Dataset ingestion, standardization, and stratified sampling primitives."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

BALANCED = "balanced"
IMBALANCED = "imbalanced"
IMBALANCE_THRESHOLD = 0.20

# Tokens treated as a missing value; a row containing one is dropped at load.
_MISSING_TOKENS = {"", "na", "n/a", "nan", "null", "none", "?"}


class DataError(ValueError):
    """A dataset file or dataset precondition is invalid."""


@dataclass(frozen=True)
class Dataset:
    """An immutable labelled dataset.

    features: (n_instances, n_features) float64, finite.
    labels: (n_instances,) int64 dense class ids in [0, K), every id present.
    class_names: original label tokens in first-appearance order; the index of
    a name is its class id.

    Treated as read-only after construction; safe to share across workers.
    """

    name: str
    features: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise DataError("features must be a nonempty 2-d matrix")
        if labels.shape != (feats.shape[0],):
            raise DataError("labels length must equal n_instances")
        if not np.isfinite(feats).all():
            raise DataError("features must be finite")
        k = len(self.class_names)
        if k < 1:
            raise DataError("at least one class name is required")
        if labels.min() < 0 or labels.max() >= k:
            raise DataError("labels must lie in [0, n_classes)")
        if not (np.bincount(labels, minlength=k) > 0).all():
            raise DataError("every class id must appear at least once")

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def take(self, indices: np.ndarray, name: str | None = None) -> "Dataset":
        """Row subset as a new Dataset; indices must keep every class alive."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            name if name is not None else self.name,
            self.features[idx],
            self.labels[idx],
            self.class_names,
        )


@dataclass(frozen=True)
class ClassDistribution:
    """Per-class instance counts and proportions."""

    counts: np.ndarray
    proportions: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        if counts.size == 0 or counts.sum() <= 0:
            raise DataError("class counts must be nonempty with positive total")
        props = counts / counts.sum()
        object.__setattr__(self, "proportions", props)

    @classmethod
    def from_labels(cls, labels: np.ndarray, n_classes: int) -> "ClassDistribution":
        counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes)
        return cls(counts, counts / counts.sum())


@dataclass(frozen=True)
class SubsampleSpec:
    """How to draw a row subsample: fraction in (0, 1], stratified flag, seed."""

    fraction: float
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.fraction <= 1.0):
            raise DataError("subsample fraction must lie in (0, 1]")


def class_distribution(ds: Dataset) -> ClassDistribution:
    return ClassDistribution.from_labels(ds.labels, ds.n_classes)


def imbalance_index(dist: ClassDistribution) -> float:
    """Class-imbalance index: K * sum_i (n_i/N - 1/K)^2.

    0 for a perfectly uniform class distribution; grows toward 1 (for two
    classes) as one class absorbs the dataset.
    """
    k = dist.counts.size
    return float(k * ((dist.proportions - 1.0 / k) ** 2).sum())


def _is_imbalanced(index: float) -> bool:
    # Strictly greater: an index of exactly 0.20 still counts as balanced.
    return index > IMBALANCE_THRESHOLD


def classify_balance(ds: Dataset) -> str:
    """Label a dataset BALANCED or IMBALANCED by its imbalance index."""
    return IMBALANCED if _is_imbalanced(imbalance_index(class_distribution(ds))) else BALANCED


def load_dataset(
    path,
    label_column: str = "target",
    delimiter: str = "\t",
    name: str | None = None,
) -> Dataset:
    """Load a delimited text file with a header row into a Dataset.

    Non-label columns are parsed as reals. Rows with missing values (empty
    cells or NA markers) are dropped; a non-numeric feature cell is an error.
    Labels are re-encoded to dense ids in first-appearance order.
    """
    p = Path(path)
    if not p.is_file():
        raise DataError(f"no such dataset file: {p}")
    with open(p, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if not header:
            raise DataError(f"{p.name}: empty file")
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DataError(f"{p.name}: label column {label_column!r} not found")
        label_pos = header.index(label_column)
        feature_pos = [i for i in range(len(header)) if i != label_pos]
        if not feature_pos:
            raise DataError(f"{p.name}: no feature columns besides the label")

        rows: list[list[float]] = []
        raw_labels: list[str] = []
        for lineno, record in enumerate(reader, start=2):
            if not record or (len(record) == 1 and not record[0].strip()):
                continue  # blank line
            if len(record) != len(header):
                raise DataError(
                    f"{p.name}:{lineno}: expected {len(header)} fields, got {len(record)}"
                )
            label_token = record[label_pos].strip()
            cells = [record[i].strip() for i in feature_pos]
            if label_token.lower() in _MISSING_TOKENS or any(
                c.lower() in _MISSING_TOKENS for c in cells
            ):
                continue  # missing value: reject the row
            values = []
            for col, cell in zip(feature_pos, cells):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{p.name}:{lineno}: unparsable cell {cell!r} in column {header[col]!r}"
                    ) from None
                if not np.isfinite(v):
                    values = None  # non-finite value: treat as missing
                    break
                values.append(v)
            if values is None:
                continue
            rows.append(values)
            raw_labels.append(label_token)

    if len(rows) < 2:
        raise DataError(f"{p.name}: fewer than 2 usable rows")
    class_names: list[str] = []
    ids: dict[str, int] = {}
    labels = np.empty(len(raw_labels), dtype=np.int64)
    for i, token in enumerate(raw_labels):
        if token not in ids:
            ids[token] = len(class_names)
            class_names.append(token)
        labels[i] = ids[token]
    if len(class_names) < 2:
        raise DataError(f"{p.name}: fewer than 2 classes")
    return Dataset(
        name if name is not None else p.stem,
        np.asarray(rows, dtype=np.float64),
        labels,
        tuple(class_names),
    )


def standardize(ds: Dataset) -> Dataset:
    """Z-score each feature column (population std, divide by n).

    Constant columns map to all-zeros. Idempotent up to float round-off.
    """
    if ds.n_instances < 2:
        raise DataError("standardize requires at least 2 instances")
    mu = ds.features.mean(axis=0)
    sd = ds.features.std(axis=0)
    scale = np.where(sd > 0, sd, 1.0)
    z = (ds.features - mu) / scale
    return Dataset(ds.name, z, ds.labels, ds.class_names)


def _stratified_counts(counts: np.ndarray, fraction: float) -> np.ndarray:
    """Per-class take counts: floor(fraction * n_i) plus largest-remainder seats.

    Seats only go to classes with a positive fractional part, so every class
    stays within 1 of fraction * n_i.
    """
    exact = fraction * counts
    base = np.floor(exact).astype(np.int64)
    frac = exact - base
    seats = int(round(float(exact.sum()))) - int(base.sum())
    if seats > 0:
        # descending fractional part, ties broken by class id
        order = np.lexsort((np.arange(counts.size), -frac))
        eligible = [c for c in order if frac[c] > 1e-12]
        for c in eligible[: min(seats, len(eligible))]:
            base[c] += 1
    return base


def stratified_subsample(ds: Dataset, spec: SubsampleSpec) -> tuple[np.ndarray, Dataset]:
    """Draw a seeded row subsample; returns (selected indices, sub-dataset).

    Stratified mode preserves per-class counts to within one instance of
    fraction * n_i. Selected indices come back sorted ascending, so a
    fraction of 1.0 is the identity.
    """
    rng = np.random.default_rng(spec.seed)
    n = ds.n_instances
    if spec.stratified:
        counts = ds.class_counts()
        targets = _stratified_counts(counts, spec.fraction)
        if (targets == 0).any():
            empty = int(np.flatnonzero(targets == 0)[0])
            raise DataError(
                f"class {ds.class_names[empty]!r} would become empty at fraction {spec.fraction}"
            )
        picked = []
        for c in range(ds.n_classes):
            idx = np.flatnonzero(ds.labels == c)
            perm = rng.permutation(idx)
            picked.append(perm[: targets[c]])
        selected = np.sort(np.concatenate(picked))
    else:
        m = max(1, int(round(spec.fraction * n)))
        selected = np.sort(rng.permutation(n)[:m])
    return selected, ds.take(selected)


def stratified_holdout_split(
    ds: Dataset, train_fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded stratified train/test partition; both sides keep every class."""
    if not (0.0 < train_fraction < 1.0):
        raise DataError("train fraction must lie strictly between 0 and 1")
    counts = ds.class_counts()
    targets = _stratified_counts(counts, train_fraction)
    if (targets == 0).any() or (targets == counts).any():
        raise DataError(
            f"a class is too small for a {train_fraction:.0%} stratified holdout"
        )
    rng = np.random.default_rng(seed)
    train_parts, test_parts = [], []
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == c)
        perm = rng.permutation(idx)
        train_parts.append(perm[: targets[c]])
        test_parts.append(perm[targets[c] :])
    return np.sort(np.concatenate(train_parts)), np.sort(np.concatenate(test_parts))
