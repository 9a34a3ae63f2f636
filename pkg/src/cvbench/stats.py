"""Friedman significance testing and win counts over evaluation records."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .harness import EvalRecord

BIAS = "bias"
STD = "std"


class StatsError(ValueError):
    """Invalid table shape or record set for an analysis."""


@dataclass(frozen=True)
class BlockTable:
    """Rectangular blocks x treatments table of one measure."""

    rows: tuple[str, ...]
    treatments: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.shape != (len(self.rows), len(self.treatments)):
            raise StatsError("values shape must match rows x treatments")


def _measure(rec: EvalRecord, measure: str, absolute_bias: bool) -> float:
    if measure == BIAS:
        return abs(rec.bias) if absolute_bias else rec.bias
    if measure == STD:
        return rec.std
    raise StatsError(f"unknown measure {measure!r}")


def _treatments(records) -> list[str]:
    seen: list[str] = []
    for rec in records:
        if rec.splitter not in seen:
            seen.append(rec.splitter)
    return seen


def block_table(
    records,
    measure: str = BIAS,
    balance: str | None = None,
    k_splits: int | None = None,
    blocks: str = "dataset_learner",
    absolute_bias: bool = True,
) -> BlockTable:
    """Build the Friedman input table from records.

    Treatments are the splitter labels; blocks are (dataset, learner) pairs,
    or datasets with values averaged over learners when blocks="dataset".
    Rows missing any treatment (failed cells) are dropped. Bias enters as
    |bias| by default so "closest to zero" orders the ranks.
    """
    if blocks not in ("dataset_learner", "dataset"):
        raise StatsError("blocks must be 'dataset_learner' or 'dataset'")
    subset = [
        r
        for r in records
        if (balance is None or r.dataset_balance == balance)
        and (k_splits is None or r.k_splits == k_splits)
    ]
    treatments = _treatments(subset)
    if not treatments:
        raise StatsError("no records match the requested slice")
    cells: dict[str, dict[str, list[float]]] = {}
    for rec in subset:
        row = rec.dataset if blocks == "dataset" else f"{rec.dataset}|{rec.learner}"
        cells.setdefault(row, {}).setdefault(rec.splitter, []).append(
            _measure(rec, measure, absolute_bias)
        )
    rows, values = [], []
    for row in cells:
        per_treatment = cells[row]
        if set(per_treatment) != set(treatments):
            continue  # exclude incomplete blocks row-wise
        rows.append(row)
        values.append([float(np.mean(per_treatment[t])) for t in treatments])
    if not rows:
        raise StatsError("no complete blocks available")
    return BlockTable(tuple(rows), tuple(treatments), np.array(values))


def _average_ranks(row: np.ndarray) -> tuple[np.ndarray, float]:
    """Ascending ranks with ties averaged; also Σ(t³ - t) over tie groups."""
    k = row.size
    order = np.argsort(row, kind="stable")
    ranks = np.empty(k)
    tie_term = 0.0
    i = 0
    while i < k:
        j = i
        while j + 1 < k and row[order[j + 1]] == row[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        t = j - i + 1
        tie_term += t**3 - t
        i = j + 1
    return ranks, tie_term


def friedman_test(table: BlockTable) -> tuple[float, float]:
    """Friedman chi-square statistic (tie-corrected) and its p-value.

    Each block is ranked (average ranks on ties); the statistic is
    12n/(k(k+1)) * Σ_j (R̄_j - (k+1)/2)², divided by the standard tie
    correction 1 - ΣT/(nk(k²-1)). A fully tied table (all rows constant)
    gives statistic 0 and p-value exactly 1. The p-value comes from the
    chi-square distribution with k-1 degrees of freedom.
    """
    n, k = table.values.shape
    if k < 2:
        raise StatsError("friedman_test needs at least 2 treatments")
    if n < 2:
        raise StatsError("friedman_test needs at least 2 blocks")
    ranks = np.empty((n, k))
    tie_sum = 0.0
    for i, row in enumerate(table.values):
        ranks[i], tie = _average_ranks(row)
        tie_sum += tie
    mean_ranks = ranks.mean(axis=0)
    raw = 12.0 * n / (k * (k + 1.0)) * ((mean_ranks - (k + 1.0) / 2.0) ** 2).sum()
    correction = 1.0 - tie_sum / (n * k * (k**2 - 1.0))
    if correction <= 0.0:
        return 0.0, 1.0
    statistic = raw / correction
    if statistic == 0.0:
        return 0.0, 1.0
    return float(statistic), float(chi2.sf(statistic, k - 1))


def win_counts(
    records,
    measure: str = BIAS,
    absolute_bias: bool = True,
) -> dict[str, int]:
    """Per-treatment count of (dataset, learner, k) rows it won.

    A row's winner has the measure closest to zero (|bias| by default, or the
    std); exact ties award a win to every tied treatment. Rows missing any
    treatment are skipped.
    """
    treatments = _treatments(records)
    if not treatments:
        raise StatsError("no records given")
    rows: dict[tuple, dict[str, list[float]]] = {}
    for rec in records:
        row_key = (rec.dataset, rec.learner, rec.k_splits)
        rows.setdefault(row_key, {}).setdefault(rec.splitter, []).append(
            _measure(rec, measure, absolute_bias)
        )
    counts = {t: 0 for t in treatments}
    for per_treatment in rows.values():
        if set(per_treatment) != set(treatments):
            continue
        values = {t: float(np.mean(per_treatment[t])) for t in treatments}
        best = min(values.values())
        for t, v in values.items():
            if v == best:
                counts[t] += 1
    return counts
