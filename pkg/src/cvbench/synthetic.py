"""Synthetic Gaussian-blob datasets for demos and smoke configs."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import Dataset


def blob_dataset(
    name: str,
    class_sizes,
    n_features: int = 2,
    blobs_per_class: int = 1,
    spread: float = 1.0,
    separation: float = 8.0,
    seed: int = 0,
) -> Dataset:
    """Gaussian blobs with integer class labels.

    Each class draws blobs_per_class centers uniformly in a cube of side
    separation and splits its rows evenly among them, so classes can carry
    intra-class substructure for the cluster-based splitters to find.
    """
    rng = np.random.default_rng(seed)
    feats, labels = [], []
    for c, size in enumerate(class_sizes):
        centers = rng.uniform(-separation, separation, size=(blobs_per_class, n_features))
        for i in range(size):
            center = centers[i % blobs_per_class]
            feats.append(rng.normal(center, spread))
            labels.append(c)
    order = rng.permutation(len(labels))
    feats = np.asarray(feats)[order]
    labels = np.asarray(labels, dtype=np.int64)[order]
    names = tuple(str(c) for c in range(len(class_sizes)))
    return Dataset(name, feats, labels, names)


def write_tsv(ds: Dataset, path, delimiter: str = "\t") -> Path:
    """Write a Dataset as delimited text loadable by load_dataset.

    Floats are written with repr so a round-trip preserves values exactly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = [f"f{j}" for j in range(ds.n_features)] + ["target"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(cols) + "\n")
        for row, label in zip(ds.features, ds.labels):
            cells = [repr(float(v)) for v in row] + [ds.class_names[label]]
            fh.write(delimiter.join(cells) + "\n")
    return path
