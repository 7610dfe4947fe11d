"""Reward arithmetic for the rubric bank.

A hypothesis earns an exploitation term from its squared prediction errors
plus an exploration bonus that decays with how often it has been tried,
in the style of an upper confidence bound. Natural log throughout.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Sequence

from .types import Hypothesis, HypoGenConfig


@dataclass(frozen=True, slots=True)
class PredictionLog:
    """One rubric's prediction for one sample, next to the human truth."""

    hypothesis_id: str
    sample_id: str
    predicted: float
    truth: float

    @property
    def error(self) -> float:
        return self.truth - self.predicted


def _reward(n_seen: int, sum_sq_err: float, log_arg: float, cfg: HypoGenConfig) -> float:
    exploitation = cfg.a - cfg.b * (sum_sq_err / n_seen)
    exploration = cfg.alpha * math.sqrt(math.log(log_arg) / n_seen)
    return exploitation + exploration


def initial_reward(errors: Sequence[float], cfg: HypoGenConfig) -> float:
    """Reward of a fresh hypothesis scored once on each seeding sample.

    mean over errors of (a - b*e^2), plus alpha * sqrt(ln(n) / n).
    """
    if not errors:
        raise ValueError("initial_reward needs at least one error")
    n = len(errors)
    sum_sq = sum(e * e for e in errors)
    return _reward(n, sum_sq, float(n), cfg)


def update_reward(h: Hypothesis, t: int, cfg: HypoGenConfig) -> float:
    """Reward after the update stage has consumed t samples.

    mean over seen samples of (a - b*e^2), plus
    alpha * sqrt(ln(t + s_init_size) / n_seen). Coincides with
    `initial_reward` at t = 0 when only the seeding samples were seen.
    """
    if h.n_seen < 1:
        raise ValueError(f"hypothesis {h.id} has seen no samples")
    if t < 0:
        raise ValueError("t must be non-negative")
    return _reward(h.n_seen, h.sum_sq_err, float(t + cfg.s_init_size), cfg)


def record_outcome(
    h: Hypothesis,
    sample_id: str,
    predicted: float,
    truth: float,
    t: int,
    cfg: HypoGenConfig,
) -> Hypothesis:
    """Fold one scored sample into a hypothesis; returns the new value."""
    if sample_id in h.seen_sample_ids:
        raise ValueError(f"hypothesis {h.id} already saw sample {sample_id}")
    err = truth - predicted
    n_seen = h.n_seen + 1
    sum_sq = h.sum_sq_err + err * err
    updated = dataclasses.replace(
        h,
        n_seen=n_seen,
        sum_sq_err=sum_sq,
        seen_sample_ids=h.seen_sample_ids + (sample_id,),
        last_update_step=t,
        reward=_reward(n_seen, sum_sq, float(t + cfg.s_init_size), cfg),
    )
    return updated


def top_k(hypotheses: Sequence[Hypothesis], k: int) -> list[Hypothesis]:
    """The k highest-reward hypotheses.

    Deterministic tie-break: reward desc, created_at_step asc, id asc.
    """
    if k < 1:
        raise ValueError("k must be positive")
    ranked = sorted(
        hypotheses, key=lambda h: (-h.reward, h.created_at_step, h.id)
    )
    return ranked[:k]


def is_wrong_step(
    predictions: Sequence[PredictionLog],
    cfg: HypoGenConfig,
    extra_misses: int = 0,
) -> bool:
    """Whether a sample counts as collectively mispredicted.

    True when at least w_hyp of the top hypotheses missed by strictly more
    than theta. An absolute error of exactly theta is a hit. `extra_misses`
    lets the caller count scoring calls that failed outright.
    """
    if not predictions and extra_misses == 0:
        raise ValueError("is_wrong_step needs at least one prediction")
    misses = sum(1 for p in predictions if abs(p.error) > cfg.theta)
    return misses + extra_misses >= cfg.w_hyp
