"""Rank and linear correlation statistics for meta-evaluation.

Spearman is computed as the Pearson correlation of average ranks, so tied
values share the mean of the rank positions they occupy.

Convention for degenerate vectors (argument order matters only here): the
second argument is the reference (human) vector. An all-equal reference
yields 1.0 with a flag; constant predictions against a varying reference
yield 0.0 with a warning.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .types import CorrelationReport, GroupCorrelation, SkippedGroup

log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class MetaRecord:
    """One joined row for meta-evaluation; predicted is None when unscored."""

    group_id: str
    predicted: float | None
    human: float


def _check_pair(xs: Sequence[float], ys: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise ValueError("need at least two points")
    ax = np.asarray(xs, dtype=float)
    ay = np.asarray(ys, dtype=float)
    if not (np.isfinite(ax).all() and np.isfinite(ay).all()):
        raise ValueError("inputs must be finite")
    return ax, ay


def _constant(arr: np.ndarray) -> bool:
    return bool(np.all(arr == arr[0]))


def _degenerate_value(xs: np.ndarray, ys: np.ndarray) -> float | None:
    if _constant(ys):
        return 1.0
    if _constant(xs):
        log.warning("constant predictions against a varying reference; correlation 0")
        return 0.0
    return None


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation of xs (predictions) and ys (reference)."""
    ax, ay = _check_pair(xs, ys)
    special = _degenerate_value(ax, ay)
    if special is not None:
        return special
    dx = ax - ax.mean()
    dy = ay - ay.mean()
    return float(np.dot(dx, dy) / np.sqrt(np.dot(dx, dx) * np.dot(dy, dy)))


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks; ties receive the mean of the positions they span."""
    arr = np.asarray(values, dtype=float)
    order = np.argsort(arr, kind="mergesort")
    ranks = np.empty(len(arr), dtype=float)
    i = 0
    while i < len(arr):
        j = i
        while j < len(arr) and arr[order[j]] == arr[order[i]]:
            j += 1
        # positions i+1 .. j (1-based) share one value
        ranks[order[i:j]] = (i + 1 + j) / 2.0
        i = j
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman rank correlation with average-rank tie handling."""
    ax, ay = _check_pair(xs, ys)
    special = _degenerate_value(ax, ay)
    if special is not None:
        return special
    return pearson(average_ranks(ax), average_ranks(ay))


def grouped_correlation(
    records: Iterable[MetaRecord],
    mode: str = "grouped",
    weighted: bool = False,
) -> CorrelationReport:
    """Correlate predictions with human scores, per group or dataset-wide.

    Records with predicted=None are excluded and counted. In grouped mode,
    groups with fewer than two usable records are skipped and reported;
    groups whose human scores are all equal contribute 1.0 to both
    aggregates, flagged. The aggregate is an unweighted mean over groups
    unless `weighted`, which weights by group size.
    """
    if mode not in ("grouped", "dataset"):
        raise ValueError(f"unknown mode {mode!r}")
    usable: list[MetaRecord] = []
    excluded = 0
    for rec in records:
        if rec.predicted is None:
            excluded += 1
        else:
            usable.append(rec)
    if len(usable) < 2:
        raise ValueError("need at least two scored records")

    if mode == "dataset":
        preds = [r.predicted for r in usable]
        humans = [r.human for r in usable]
        return CorrelationReport(
            mode=mode,
            aggregate_spearman=spearman(preds, humans),
            aggregate_pearson=pearson(preds, humans),
            excluded_records=excluded,
            weighted=weighted,
            n_records=len(usable),
        )

    by_group: dict[str, list[MetaRecord]] = {}
    for rec in usable:
        by_group.setdefault(rec.group_id, []).append(rec)

    per_group: dict[str, GroupCorrelation] = {}
    skipped: list[SkippedGroup] = []
    for gid in sorted(by_group):
        rows = by_group[gid]
        if len(rows) < 2:
            skipped.append(SkippedGroup(group_id=gid, reason="singleton", n=len(rows)))
            continue
        humans = [r.human for r in rows]
        preds = [r.predicted for r in rows]
        if all(h == humans[0] for h in humans):
            per_group[gid] = GroupCorrelation(
                n=len(rows), spearman=1.0, pearson=1.0, all_equal=True
            )
            continue
        per_group[gid] = GroupCorrelation(
            n=len(rows),
            spearman=spearman(preds, humans),
            pearson=pearson(preds, humans),
        )
    if not per_group:
        raise ValueError("no group had two or more scored records")

    if weighted:
        total = sum(g.n for g in per_group.values())
        agg_s = sum(g.spearman * g.n for g in per_group.values()) / total
        agg_p = sum(g.pearson * g.n for g in per_group.values()) / total
    else:
        agg_s = sum(g.spearman for g in per_group.values()) / len(per_group)
        agg_p = sum(g.pearson for g in per_group.values()) / len(per_group)
    return CorrelationReport(
        mode=mode,
        aggregate_spearman=agg_s,
        aggregate_pearson=agg_p,
        per_group=per_group,
        skipped_groups=tuple(skipped),
        excluded_records=excluded,
        weighted=weighted,
        n_records=len(usable),
    )
