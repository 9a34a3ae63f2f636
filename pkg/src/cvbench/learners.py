"""Built-in learners, classification metrics, and grid-search tuning.

Three real learners sit behind one train/predict interface: multinomial
logistic regression fit by full-batch gradient descent, a CART decision tree
on Gini impurity, and a random forest of such trees. Two debug kinds exist
for harness tests: "constant" always predicts a fixed class, and "oracle" is
resolved by the harness itself (it scores as the true labels and never
reaches train()). All learners are deterministic per seed.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping

import numpy as np

from .data import Dataset
from .util import derive_seed

LOGREG = "logreg"
TREE = "tree"
FOREST = "forest"
CONSTANT = "constant"
ORACLE = "oracle"

# Tuning grids shipped as defaults (selectable hyperparameters and the values
# tried for each learner kind).
DEFAULT_GRIDS: dict[str, dict[str, list]] = {
    LOGREG: {"C": [0.003, 0.03, 0.3, 3.0, 30.0]},
    TREE: {"max_depth": [1, 5, 10, 15, 50]},
    FOREST: {"max_depth": [1, 5, 10, 15, 50]},
}

_ALLOWED_PARAMS = {
    LOGREG: {"C"},
    TREE: {"max_depth"},
    FOREST: {"max_depth", "n_trees", "bootstrap", "feature_subsample"},
    CONSTANT: {"class_id"},
    ORACLE: set(),
}

_LOGREG_LEARNING_RATE = 0.1
_LOGREG_EPOCHS = 500


class LearnerError(ValueError):
    """Invalid learner specification or training input."""


@dataclass(frozen=True)
class LearnerSpec:
    """A learner kind plus hyperparameters and a seed.

    Allowed hyperparameters: logreg {C}; tree {max_depth}; forest {max_depth,
    n_trees} plus the debug switches bootstrap / feature_subsample (both
    default True) that reduce a 1-tree forest to a plain tree.
    """

    kind: str
    hyperparams: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0
    name: str | None = None

    def __post_init__(self):
        if self.kind not in _ALLOWED_PARAMS:
            raise LearnerError(f"unknown learner kind {self.kind!r}")
        extra = set(self.hyperparams) - _ALLOWED_PARAMS[self.kind]
        if extra:
            raise LearnerError(f"{self.kind} does not accept hyperparams {sorted(extra)}")
        object.__setattr__(self, "hyperparams", dict(self.hyperparams))

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.hyperparams:
            inner = ",".join(f"{k}={v}" for k, v in sorted(self.hyperparams.items()))
            return f"{self.kind}[{inner}]"
        return self.kind

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind}
        if self.hyperparams:
            out["hyperparams"] = dict(self.hyperparams)
        if self.seed:
            out["seed"] = self.seed
        if self.name is not None:
            out["name"] = self.name
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LearnerSpec":
        return cls(
            kind=d["kind"],
            hyperparams=d.get("hyperparams", {}),
            seed=int(d.get("seed", 0)),
            name=d.get("name"),
        )


@dataclass
class TrainedModel:
    """Opaque fitted parameters for one learner kind."""

    kind: str
    n_classes: int
    payload: Any
    degenerate: bool = False  # trained on a single class


# ---------------------------------------------------------------------------
# logistic regression


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _train_logreg(X, y, classes, C, loss_trace=None):
    """Full-batch gradient descent on the softmax cross-entropy.

    Objective: sum-of-CE + ||W||^2 / (2C), i.e. mean-CE + ||W||^2 / (2Cn);
    the intercept is not penalized. Fixed learning rate and epoch count.
    """
    n, d = X.shape
    m = classes.size
    local = np.searchsorted(classes, y)
    onehot = np.zeros((n, m))
    onehot[np.arange(n), local] = 1.0
    W = np.zeros((d, m))
    b = np.zeros(m)
    lam = 1.0 / (C * n)
    for epoch in range(_LOGREG_EPOCHS):
        P = _softmax(X @ W + b)
        if loss_trace is not None:
            ce = -np.log(np.clip(P[np.arange(n), local], 1e-300, None)).mean()
            loss_trace(epoch, float(ce + 0.5 * lam * (W**2).sum()))
        G = (P - onehot) / n
        W -= _LOGREG_LEARNING_RATE * (X.T @ G + lam * W)
        b -= _LOGREG_LEARNING_RATE * G.sum(axis=0)
    return W, b


# ---------------------------------------------------------------------------
# CART


@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None
    leaf_class: int = -1


def _majority(counts: np.ndarray) -> int:
    return int(np.argmax(counts))  # ties resolve to the lowest class id


def _best_split(X, y, n_classes, feature_ids):
    """Best (feature, threshold) by Gini gain; None when nothing improves.

    Ties keep the first feature in feature_ids order and, within a feature,
    the lowest threshold.
    """
    n = y.size
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    parent_counts = onehot.sum(axis=0)
    parent_gini = 1.0 - ((parent_counts / n) ** 2).sum()
    best_gain = 1e-12
    best = None
    for f in feature_ids:
        v = X[:, f]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        cuts = np.flatnonzero(vs[1:] > vs[:-1])
        if cuts.size == 0:
            continue
        cum = np.cumsum(onehot[order], axis=0)
        nl = (cuts + 1).astype(np.float64)
        nr = n - nl
        cl = cum[cuts]
        cr = parent_counts - cl
        gini_l = 1.0 - ((cl / nl[:, None]) ** 2).sum(axis=1)
        gini_r = 1.0 - ((cr / nr[:, None]) ** 2).sum(axis=1)
        gain = parent_gini - (nl * gini_l + nr * gini_r) / n
        bi = int(np.argmax(gain))
        if gain[bi] > best_gain:
            best_gain = float(gain[bi])
            cut = cuts[bi]
            best = (int(f), float((vs[cut] + vs[cut + 1]) / 2.0))
    return best


def _build_tree(X, y, n_classes, max_depth, depth=0, rng=None, n_candidate_features=None):
    counts = np.bincount(y, minlength=n_classes)
    node = _Node()
    depth_cap = max_depth is not None and depth >= max_depth
    if depth_cap or counts.max() == y.size or y.size < 2:
        node.leaf_class = _majority(counts)
        return node
    d = X.shape[1]
    if n_candidate_features is not None and n_candidate_features < d:
        feature_ids = np.sort(rng.choice(d, size=n_candidate_features, replace=False))
    else:
        feature_ids = np.arange(d)
    best = _best_split(X, y, n_classes, feature_ids)
    if best is None:
        node.leaf_class = _majority(counts)
        return node
    node.feature, node.threshold = best
    mask = X[:, node.feature] <= node.threshold
    node.left = _build_tree(
        X[mask], y[mask], n_classes, max_depth, depth + 1, rng, n_candidate_features
    )
    node.right = _build_tree(
        X[~mask], y[~mask], n_classes, max_depth, depth + 1, rng, n_candidate_features
    )
    return node


def _tree_predict(root: _Node, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0], dtype=np.int64)
    stack = [(root, np.arange(X.shape[0]))]
    while stack:
        node, idx = stack.pop()
        if idx.size == 0:
            continue
        if node.leaf_class >= 0:
            out[idx] = node.leaf_class
            continue
        mask = X[idx, node.feature] <= node.threshold
        stack.append((node.left, idx[mask]))
        stack.append((node.right, idx[~mask]))
    return out


# ---------------------------------------------------------------------------
# interface


def train(
    spec: LearnerSpec,
    X_train: np.ndarray,
    y_train: np.ndarray,
    loss_trace: Callable[[int, float], None] | None = None,
) -> TrainedModel:
    """Fit a learner; deterministic for a fixed spec (seed included).

    A single-class training set degenerates to a constant predictor (the
    model is flagged). The oracle debug kind cannot be trained here; the
    harness resolves it directly against the true labels.
    """
    X = np.asarray(X_train, dtype=np.float64)
    y = np.asarray(y_train, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise LearnerError("empty training set")
    if not np.isfinite(X).all():
        raise LearnerError("training features must be finite")
    if y.shape != (X.shape[0],):
        raise LearnerError("labels must match the training rows")
    if spec.kind == ORACLE:
        raise LearnerError("the oracle debug learner is resolved by the harness, not trained")
    n_classes = int(y.max()) + 1
    classes = np.unique(y)

    if spec.kind == CONSTANT:
        cls = int(spec.hyperparams.get("class_id", 0))
        return TrainedModel(CONSTANT, max(n_classes, cls + 1), cls)

    if classes.size < 2:
        return TrainedModel(spec.kind, n_classes, int(classes[0]), degenerate=True)

    if spec.kind == LOGREG:
        C = float(spec.hyperparams.get("C", 1.0))
        if C <= 0:
            raise LearnerError("C must be positive")
        W, b = _train_logreg(X, y, classes, C, loss_trace)
        return TrainedModel(LOGREG, n_classes, (W, b, classes))

    max_depth = spec.hyperparams.get("max_depth")
    if max_depth is not None:
        max_depth = int(max_depth)
        if max_depth < 1:
            raise LearnerError("max_depth must be >= 1")

    if spec.kind == TREE:
        root = _build_tree(X, y, n_classes, max_depth)
        return TrainedModel(TREE, n_classes, root)

    if spec.kind == FOREST:
        n_trees = int(spec.hyperparams.get("n_trees", 100))
        if n_trees < 1:
            raise LearnerError("n_trees must be >= 1")
        bootstrap = bool(spec.hyperparams.get("bootstrap", True))
        subsample = bool(spec.hyperparams.get("feature_subsample", True))
        d = X.shape[1]
        n_candidates = max(1, int(round(np.sqrt(d)))) if subsample else None
        trees = []
        for t in range(n_trees):
            rng = np.random.default_rng(derive_seed(spec.seed, "tree", t))
            idx = rng.integers(0, X.shape[0], X.shape[0]) if bootstrap else np.arange(X.shape[0])
            trees.append(
                _build_tree(X[idx], y[idx], n_classes, max_depth, rng=rng,
                            n_candidate_features=n_candidates)
            )
        return TrainedModel(FOREST, n_classes, trees)

    raise LearnerError(f"unknown learner kind {spec.kind!r}")


def predict(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    """One class id per row; argmax/vote ties resolve to the lowest class id."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise LearnerError("X must be a 2-d matrix")
    if model.kind == CONSTANT or model.degenerate:
        return np.full(X.shape[0], int(model.payload), dtype=np.int64)
    if model.kind == LOGREG:
        W, b, classes = model.payload
        if X.shape[1] != W.shape[0]:
            raise LearnerError("feature dimension does not match training")
        scores = X @ W + b
        return classes[np.argmax(scores, axis=1)]
    if model.kind == TREE:
        return _tree_predict(model.payload, X)
    if model.kind == FOREST:
        votes = np.zeros((model.n_classes, X.shape[0]), dtype=np.int64)
        for root in model.payload:
            pred = _tree_predict(root, X)
            votes[pred, np.arange(X.shape[0])] += 1
        return np.argmax(votes, axis=0)
    raise LearnerError(f"unknown model kind {model.kind!r}")


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class ConfusionCounts:
    """One-vs-rest TP/FP/FN/TN tallies per class."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @property
    def n_eval(self) -> int:
        return int(self.tp[0] + self.fp[0] + self.fn[0] + self.tn[0])

    @property
    def n_classes(self) -> int:
        return self.tp.size


def confusion(y_true, y_pred, n_classes: int) -> ConfusionCounts:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise LearnerError("y_true and y_pred must have equal length")
    for arr, what in ((y_true, "y_true"), (y_pred, "y_pred")):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise LearnerError(f"{what} contains a label outside [0, {n_classes})")
    matrix = np.bincount(
        y_true * n_classes + y_pred, minlength=n_classes * n_classes
    ).reshape(n_classes, n_classes)
    tp = np.diag(matrix).astype(np.int64)
    fn = matrix.sum(axis=1) - tp
    fp = matrix.sum(axis=0) - tp
    tn = y_true.size - tp - fn - fp
    return ConfusionCounts(tp, fp, fn, tn)


def accuracy(cc: ConfusionCounts) -> float:
    """Correct predictions over the total."""
    return float(cc.tp.sum() / cc.n_eval)


def _per_class_f1(cc: ConfusionCounts) -> np.ndarray:
    # 2TP / (2TP + FP + FN); defined as 0 when the denominator vanishes
    denom = 2 * cc.tp + cc.fp + cc.fn
    out = np.zeros(cc.n_classes)
    nz = denom > 0
    out[nz] = 2 * cc.tp[nz] / denom[nz]
    return out


def f1_score(cc: ConfusionCounts, average: str = "macro") -> float:
    """Harmonic mean of precision and recall.

    Binary problems score the positive class (class id 1); multiclass scores
    are averaged per class, unweighted ("macro", the default) or by class
    support ("weighted").
    """
    per_class = _per_class_f1(cc)
    if cc.n_classes == 2:
        return float(per_class[1])
    if average == "macro":
        return float(per_class.mean())
    if average == "weighted":
        support = cc.tp + cc.fn
        return float((per_class * support).sum() / support.sum())
    raise LearnerError(f"unknown F1 average {average!r}")


def balanced_accuracy(cc: ConfusionCounts) -> float:
    """Unweighted mean of per-class recall; every class must appear in y_true."""
    support = cc.tp + cc.fn
    if (support == 0).any():
        missing = int(np.flatnonzero(support == 0)[0])
        raise LearnerError(f"class {missing} is absent from y_true")
    return float((cc.tp / support).mean())


def _balanced_accuracy_present(cc: ConfusionCounts) -> float:
    """Mean recall over the classes that actually appear in y_true."""
    support = cc.tp + cc.fn
    mask = support > 0
    return float((cc.tp[mask] / support[mask]).mean())


# ---------------------------------------------------------------------------
# tuning


def grid_search(
    ds: Dataset,
    kind: str,
    grid: Mapping[str, list] | None = None,
    seed: int = 0,
    n_folds: int = 5,
) -> LearnerSpec:
    """Pick hyperparameters by stratified 5-fold CV on mean balanced accuracy.

    Every combination is scored on the same seeded folds; ties keep the first
    combination in grid order. Fold test sides may miss tiny classes, so the
    per-fold score averages recall over the classes present in that fold.
    """
    from .splitters import materialize_folds, split_scv  # local: avoid module cycle

    if grid is None:
        grid = DEFAULT_GRIDS[kind]
    names = list(grid)
    if not names or any(len(grid[n]) == 0 for n in names):
        raise LearnerError("grid must be nonempty")
    fa = split_scv(ds, n_folds, derive_seed(seed, "gridcv"))
    pairs = materialize_folds(fa)
    best_score = -np.inf
    best_spec = None
    for combo_idx, values in enumerate(itertools.product(*(grid[n] for n in names))):
        params = dict(zip(names, values))
        fold_scores = []
        for fold, (train_idx, test_idx) in enumerate(pairs):
            spec = LearnerSpec(
                kind, params, seed=derive_seed(seed, "fit", combo_idx, fold)
            )
            model = train(spec, ds.features[train_idx], ds.labels[train_idx])
            pred = predict(model, ds.features[test_idx])
            cc = confusion(ds.labels[test_idx], pred, ds.n_classes)
            fold_scores.append(_balanced_accuracy_present(cc))
        score = float(np.mean(fold_scores))
        if score > best_score:
            best_score = score
            best_spec = LearnerSpec(kind, params, seed=seed)
    return best_spec
