"""Experiment harness: true performance, expected CV estimates, bias, cost.

For each (dataset, learner, splitter, fold count) cell the harness draws
repeated stratified 90% subsamples, runs the splitter's cross-validation on
each, and compares the mean CV estimate against a true-performance reference
obtained from many repeated stratified holdouts. Records persist as
newline-delimited JSON so interrupted runs resume by cell key, and every
random draw flows from a seed derived purely from (master seed, cell key) —
results are identical for any worker count and execution order.
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import __version__ as _version
from .clustering import estimate_cluster_count, estimate_dbscan_params
from .data import (
    BALANCED,
    Dataset,
    SubsampleSpec,
    classify_balance,
    load_dataset,
    standardize,
    stratified_holdout_split,
    stratified_subsample,
)
from .learners import ORACLE, LearnerSpec, confusion, f1_score, predict
from .learners import accuracy as accuracy_metric
from .learners import train as train_model
from .splitters import CLUSTER_KINDS, SplitterSpec, build_folds, materialize_folds
from .util import derive_seed

SCHEMA_VERSION = 1
RECORDS_FILE = "records.ndjson"
MANIFEST_FILE = "manifest.json"

ACCURACY = "accuracy"
F1 = "f1"

_SEED_MASK = (1 << 64) - 1


class HarnessError(RuntimeError):
    """Experiment-level failure (configuration or persistence)."""


@dataclass(frozen=True)
class ExperimentConfig:
    """The full experiment grid and its sampling parameters."""

    datasets: tuple[str, ...]
    splitters: tuple[SplitterSpec, ...]
    learners: tuple[LearnerSpec, ...]
    fold_counts: tuple[int, ...] = (2, 10)
    holdout_reps: int = 100
    cv_reps: int = 20
    train_fraction: float = 0.9
    master_seed: int = 0
    label_column: str = "target"
    delimiter: str = "\t"
    standardize: bool = True
    metric_override: str | None = None
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "datasets", tuple(self.datasets))
        object.__setattr__(self, "splitters", tuple(self.splitters))
        object.__setattr__(self, "learners", tuple(self.learners))
        object.__setattr__(self, "fold_counts", tuple(int(k) for k in self.fold_counts))
        if self.holdout_reps < 2:
            raise HarnessError("holdout_reps must be >= 2")
        if self.cv_reps < 2:
            raise HarnessError("cv_reps must be >= 2")
        if not (0.0 < self.train_fraction < 1.0):
            raise HarnessError("train_fraction must lie strictly between 0 and 1")
        if self.metric_override not in (None, ACCURACY, F1):
            raise HarnessError("metric_override must be 'accuracy', 'f1', or omitted")
        if self.workers < 1:
            raise HarnessError("workers must be >= 1")

    def to_dict(self) -> dict:
        return {
            "datasets": list(self.datasets),
            "splitters": [s.to_dict() for s in self.splitters],
            "learners": [l.to_dict() for l in self.learners],
            "fold_counts": list(self.fold_counts),
            "holdout_reps": self.holdout_reps,
            "cv_reps": self.cv_reps,
            "train_fraction": self.train_fraction,
            "master_seed": self.master_seed,
            "label_column": self.label_column,
            "delimiter": self.delimiter,
            "standardize": self.standardize,
            "metric_override": self.metric_override,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        return cls(
            datasets=tuple(d.get("datasets", ())),
            splitters=tuple(SplitterSpec.from_dict(s) for s in d.get("splitters", ())),
            learners=tuple(LearnerSpec.from_dict(l) for l in d.get("learners", ())),
            fold_counts=tuple(d.get("fold_counts", (2, 10))),
            holdout_reps=int(d.get("holdout_reps", 100)),
            cv_reps=int(d.get("cv_reps", 20)),
            train_fraction=float(d.get("train_fraction", 0.9)),
            master_seed=int(d.get("master_seed", 0)),
            label_column=d.get("label_column", "target"),
            delimiter=d.get("delimiter", "\t"),
            standardize=bool(d.get("standardize", True)),
            metric_override=d.get("metric_override"),
            workers=int(d.get("workers", 1)),
        )


@dataclass(frozen=True)
class EvalRecord:
    """One measured grid cell: CV estimates, reference performance, bias, cost."""

    cell_key: str
    dataset: str
    dataset_balance: str
    learner: str
    splitter: str
    k_splits: int
    metric_kind: str
    cv_estimates: tuple[float, ...]
    cv_mean: float
    true_perf: float
    bias: float
    std: float
    wall_seconds: tuple[float, ...]
    workers: int = 1
    schema: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["cv_estimates"] = list(self.cv_estimates)
        d["wall_seconds"] = list(self.wall_seconds)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvalRecord":
        d = dict(d)
        d["cv_estimates"] = tuple(d["cv_estimates"])
        d["wall_seconds"] = tuple(d["wall_seconds"])
        return cls(**d)


def metric_for_balance(balance: str, override: str | None = None) -> str:
    """Accuracy scores balanced datasets, F1 scores imbalanced ones."""
    if override is not None:
        return override
    return ACCURACY if balance == BALANCED else F1


def score_predictions(y_true, y_pred, n_classes: int, metric_kind: str) -> float:
    cc = confusion(y_true, y_pred, n_classes)
    if metric_kind == ACCURACY:
        return accuracy_metric(cc)
    if metric_kind == F1:
        return f1_score(cc)
    raise HarnessError(f"unknown metric kind {metric_kind!r}")


def _fold_score(learner, ds, train_idx, test_idx, metric_kind, seed) -> float:
    y_true = ds.labels[test_idx]
    if learner.kind == ORACLE:
        # perfect debug learner: scores as if it predicted the true labels
        y_pred = y_true
    else:
        spec = replace(learner, seed=seed)
        model = train_model(spec, ds.features[train_idx], ds.labels[train_idx])
        y_pred = predict(model, ds.features[test_idx])
    return score_predictions(y_true, y_pred, ds.n_classes, metric_kind)


def estimate_true_performance(
    ds: Dataset,
    learner: LearnerSpec,
    reps: int,
    train_fraction: float,
    seed: int,
    metric_kind: str | None = None,
) -> float:
    """Reference performance: mean metric over repeated stratified holdouts."""
    if reps < 1:
        raise HarnessError("reps must be >= 1")
    if metric_kind is None:
        metric_kind = metric_for_balance(classify_balance(ds))
    scores = []
    for r in range(reps):
        train_idx, test_idx = stratified_holdout_split(
            ds, train_fraction, (seed + r) & _SEED_MASK
        )
        scores.append(
            _fold_score(
                ds=ds,
                learner=learner,
                train_idx=train_idx,
                test_idx=test_idx,
                metric_kind=metric_kind,
                seed=derive_seed(seed, "holdout", r),
            )
        )
    return float(np.mean(scores))


def run_cv_once(
    ds_sub: Dataset,
    learner: LearnerSpec,
    splitter_spec: SplitterSpec,
    metric_kind: str | None = None,
    seed: int | None = None,
) -> tuple[float, float]:
    """One full CV routine: build folds, train/score each pair, average.

    Returns (mean fold score, wall-clock seconds). The clock covers fold
    construction through scoring, measured with a monotonic timer.
    """
    if metric_kind is None:
        metric_kind = metric_for_balance(classify_balance(ds_sub))
    if seed is None:
        seed = derive_seed(splitter_spec.seed, learner.seed)
    start = time.perf_counter()
    fa = build_folds(ds_sub, splitter_spec)
    scores = [
        _fold_score(
            learner, ds_sub, train_idx, test_idx, metric_kind,
            derive_seed(seed, "fold", fold),
        )
        for fold, (train_idx, test_idx) in enumerate(materialize_folds(fa))
    ]
    elapsed = time.perf_counter() - start
    return float(np.mean(scores)), elapsed


def summarize_cv_estimates(values) -> tuple[float, float]:
    """Mean and sample std (n-1 denominator) of a CV-estimate sequence."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1))


def expected_cv_estimate(
    ds: Dataset,
    learner: LearnerSpec,
    splitter_spec: SplitterSpec,
    cv_reps: int,
    train_fraction: float,
    seed: int,
    metric_kind: str | None = None,
) -> dict:
    """Repeated-subsample CV: cv_reps stratified draws, one CV run each.

    Subsample i is seeded seed+i; the splitter and learner seeds for run i
    derive from (seed, i). Returns the estimates, their mean and sample std,
    and the per-run wall-clock seconds.
    """
    if cv_reps < 2:
        raise HarnessError("cv_reps must be >= 2")
    if metric_kind is None:
        metric_kind = metric_for_balance(classify_balance(ds))
    estimates, timings = [], []
    for i in range(cv_reps):
        _, ds_sub = stratified_subsample(
            ds, SubsampleSpec(train_fraction, True, (seed + i) & _SEED_MASK)
        )
        spec_i = replace(splitter_spec, seed=derive_seed(seed, "split", i))
        score, secs = run_cv_once(
            ds_sub, learner, spec_i, metric_kind, seed=derive_seed(seed, "learn", i)
        )
        estimates.append(score)
        timings.append(secs)
    cv_mean, std = summarize_cv_estimates(estimates)
    return {
        "metric_kind": metric_kind,
        "cv_estimates": tuple(estimates),
        "cv_mean": cv_mean,
        "std": std,
        "wall_seconds": tuple(timings),
    }


# ---------------------------------------------------------------------------
# grid execution


@dataclass(frozen=True)
class _DatasetContext:
    dataset: Dataset
    balance: str
    metric_kind: str
    splitters: tuple[SplitterSpec, ...]  # cluster params resolved to numbers


def _resolve_cluster_params(ds: Dataset, spec: SplitterSpec, master_seed: int) -> SplitterSpec:
    """Replace "auto" cluster parameters with per-dataset estimates."""
    if spec.kind not in CLUSTER_KINDS:
        return spec
    params = dict(spec.cluster_params or {})
    count_keys = [k for k in ("k_clusters", "n_clusters") if params.get(k) == "auto"]
    if count_keys:
        estimated = estimate_cluster_count(ds, derive_seed(master_seed, "kcount", ds.name))
        for k in count_keys:
            params[k] = estimated
    if params.get("epsilon") == "auto" or params.get("min_samples") == "auto":
        dbs = estimate_dbscan_params(ds)
        if params.get("epsilon") == "auto":
            params["epsilon"] = dbs.epsilon
        if params.get("min_samples") == "auto":
            params["min_samples"] = dbs.min_samples
    return replace(spec, cluster_params=params)


def prepare_dataset(path: str, cfg: ExperimentConfig) -> _DatasetContext:
    ds = load_dataset(path, cfg.label_column, cfg.delimiter)
    if cfg.standardize:
        ds = standardize(ds)
    balance = classify_balance(ds)
    metric_kind = metric_for_balance(balance, cfg.metric_override)
    resolved = tuple(
        _resolve_cluster_params(ds, s, cfg.master_seed) for s in cfg.splitters
    )
    return _DatasetContext(ds, balance, metric_kind, resolved)


def cell_key(dataset: str, learner: str, splitter: str, k_splits: int) -> str:
    return f"{dataset}|{learner}|{splitter}|k={k_splits}"


def _true_perf_job(args) -> tuple[str, float]:
    key, ctx, learner, cfg = args
    value = estimate_true_performance(
        ctx.dataset,
        learner,
        cfg.holdout_reps,
        cfg.train_fraction,
        derive_seed(cfg.master_seed, "trueperf", ctx.dataset.name, learner.label),
        ctx.metric_kind,
    )
    return key, value


def _cell_job(args) -> dict:
    ctx, learner, splitter, k, cfg, true_perf = args
    key = cell_key(ctx.dataset.name, learner.label, splitter.label, k)
    seed = derive_seed(cfg.master_seed, "cell", key)
    part = expected_cv_estimate(
        ctx.dataset,
        learner,
        replace(splitter, k_splits=k),
        cfg.cv_reps,
        cfg.train_fraction,
        seed,
        ctx.metric_kind,
    )
    record = EvalRecord(
        cell_key=key,
        dataset=ctx.dataset.name,
        dataset_balance=ctx.balance,
        learner=learner.label,
        splitter=splitter.label,
        k_splits=k,
        metric_kind=part["metric_kind"],
        cv_estimates=part["cv_estimates"],
        cv_mean=part["cv_mean"],
        true_perf=true_perf,
        bias=part["cv_mean"] - true_perf,
        std=part["std"],
        wall_seconds=part["wall_seconds"],
        workers=cfg.workers,
    )
    return record.to_dict()


def load_records(results_dir) -> list[EvalRecord]:
    path = Path(results_dir) / RECORDS_FILE
    if not path.is_file():
        return []
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(EvalRecord.from_dict(json.loads(line)))
    return records


def audit_record(rec: EvalRecord, tolerance: float = 1e-12) -> list[str]:
    """Recompute the derived fields from cv_estimates; list any mismatches."""
    problems = []
    mean, std = summarize_cv_estimates(rec.cv_estimates)
    if abs(mean - rec.cv_mean) > tolerance:
        problems.append(f"cv_mean mismatch: stored {rec.cv_mean!r}, recomputed {mean!r}")
    if abs(std - rec.std) > tolerance:
        problems.append(f"std mismatch: stored {rec.std!r}, recomputed {std!r}")
    if abs((rec.cv_mean - rec.true_perf) - rec.bias) > tolerance:
        problems.append(f"bias mismatch: stored {rec.bias!r}")
    return problems


class _Manifest:
    """Per-cell status ledger written alongside the records."""

    def __init__(self, path: Path, cfg: ExperimentConfig, cells: list[str]):
        self.path = path
        self.data = {
            "tool_version": _version,
            "schema": SCHEMA_VERSION,
            "started": datetime.now(timezone.utc).isoformat(),
            "finished": None,
            "config": cfg.to_dict(),
            "cells": {key: {"status": "pending"} for key in cells},
        }

    def mark(self, key: str, status: str, error: str | None = None) -> None:
        entry = {"status": status}
        if error is not None:
            entry["error"] = error
        self.data["cells"][key] = entry
        self._write()

    def finish(self) -> None:
        self.data["finished"] = datetime.now(timezone.utc).isoformat()
        self._write()

    def _write(self) -> None:
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.data, indent=2), encoding="utf-8")
        tmp.replace(self.path)

    @property
    def n_failed(self) -> int:
        return sum(1 for c in self.data["cells"].values() if c["status"] == "failed")


def run_experiment(
    cfg: ExperimentConfig,
    results_dir,
    resume: bool = False,
    log=None,
) -> list[EvalRecord]:
    """Execute the full grid, persisting one NDJSON record per cell.

    Per-cell failures are recorded in the manifest and the grid continues.
    With resume=True, cells whose records already exist are skipped. Raises
    only on harness-level problems (e.g. an unloadable dataset file).
    """
    results_dir = Path(results_dir)
    results_dir.mkdir(parents=True, exist_ok=True)
    records_path = results_dir / RECORDS_FILE
    if not resume and records_path.exists():
        records_path.unlink()

    say = log if log is not None else (lambda msg: None)
    contexts = [prepare_dataset(path, cfg) for path in cfg.datasets]

    cells = []
    for ctx in contexts:
        for learner in cfg.learners:
            for si, splitter in enumerate(ctx.splitters):
                for k in cfg.fold_counts:
                    key = cell_key(ctx.dataset.name, learner.label, splitter.label, k)
                    cells.append((key, ctx, learner, splitter, k))
    keys = [c[0] for c in cells]
    if len(set(keys)) != len(keys):
        raise HarnessError(
            "grid cells are not unique; give duplicated splitters/learners distinct names"
        )

    done = {r.cell_key for r in load_records(results_dir)} if resume else set()
    manifest = _Manifest(results_dir / MANIFEST_FILE, cfg, keys)
    for key in done:
        if key in manifest.data["cells"]:
            manifest.data["cells"][key] = {"status": "done"}

    # Phase 1: the true-performance reference, shared by every splitter cell
    # of a (dataset, learner) pair.
    tp_jobs = []
    seen = set()
    for ctx in contexts:
        for learner in cfg.learners:
            key = f"{ctx.dataset.name}|{learner.label}"
            if key not in seen:
                seen.add(key)
                tp_jobs.append((key, ctx, learner, cfg))
    true_perf: dict[str, float] = {}
    pool = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        runner = pool.map if pool is not None else map
        for key, value in runner(_true_perf_job, tp_jobs):
            true_perf[key] = value
            say(f"true performance {key}: {value:.4f}")

        pending = [c for c in cells if c[0] not in done]
        job_args = [
            (ctx, learner, splitter, k, cfg, true_perf[f"{ctx.dataset.name}|{learner.label}"])
            for (key, ctx, learner, splitter, k) in pending
        ]
        with open(records_path, "a", encoding="utf-8") as out:
            if pool is not None:
                futures = {pool.submit(_cell_job, a): p[0] for a, p in zip(job_args, pending)}
                for future, key in futures.items():
                    _collect_cell(future, key, out, manifest, say)
            else:
                for args, (key, *_rest) in zip(job_args, pending):
                    try:
                        rec = _cell_job(args)
                    except Exception as exc:  # fail-soft: record and continue
                        manifest.mark(key, "failed", f"{type(exc).__name__}: {exc}")
                        say(f"FAILED {key}: {exc}")
                        continue
                    out.write(json.dumps(rec) + "\n")
                    out.flush()
                    manifest.mark(key, "done")
                    say(f"done {key}")
    finally:
        if pool is not None:
            pool.shutdown()
    manifest.finish()
    return load_records(results_dir)


def _collect_cell(future, key, out, manifest, say) -> None:
    try:
        rec = future.result()
    except Exception as exc:  # fail-soft: record and continue
        manifest.mark(key, "failed", f"{type(exc).__name__}: {exc}")
        say(f"FAILED {key}: {exc}")
        return
    out.write(json.dumps(rec) + "\n")
    out.flush()
    manifest.mark(key, "done")
    say(f"done {key}")
