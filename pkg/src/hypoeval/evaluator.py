"""Rubric-guided scoring: pick the best rubrics, judge samples with them.

Selection ranks rubrics by the Pearson correlation of their per-sample
predictions with the human scores on the training set. Since the selection
objective is a sum of per-rubric terms, the top-h_eval rubrics by individual
correlation form the argmax subset; `rank_by_correlation` is that pure step.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .gateway import AuthError, CompletionRequest, Gateway, GatewayError
from .prompts import ParseError, PromptLibrary, parse_final_score
from .stats import pearson
from .types import (
    AspectSpec,
    HypothesisBank,
    HypothesisScore,
    LabeledSample,
    ScoreRecord,
)

log = logging.getLogger(__name__)

DEFAULT_MAX_INFLIGHT = 8


class ScoreUnparseableError(RuntimeError):
    """Judge reply had no usable score even after one retry."""

    def __init__(self, message: str, raw_text: str, fingerprint: str):
        super().__init__(message)
        self.raw_text = raw_text
        self.fingerprint = fingerprint


class SelectionError(RuntimeError):
    """Hypothesis selection could not complete."""


@dataclass(frozen=True, slots=True)
class ScoreOutcome:
    score: float | None
    fingerprint: str
    error: str | None = None


class RubricScorer:
    """Scores (input, output) pairs against one rubric at a time."""

    def __init__(
        self,
        gateway: Gateway,
        prompts: PromptLibrary,
        aspect: AspectSpec,
        model: str,
        temperature: float = 0.0,
        max_inflight: int = DEFAULT_MAX_INFLIGHT,
        max_tokens: int = 1024,
    ):
        if max_inflight < 1:
            raise ValueError("max_inflight must be positive")
        self.gateway = gateway
        self.prompts = prompts
        self.aspect = aspect
        self.model = model
        self.temperature = temperature
        self.max_inflight = max_inflight
        self.max_tokens = max_tokens

    def score_one(
        self, input_text: str, output_text: str, hypothesis_text: str
    ) -> tuple[float, str]:
        """One judged score. Retries once on an unparseable reply, with a
        bumped seed hint so the retry is not just the cached failure."""
        system, user = self.prompts.render(
            "hyp_eval",
            self.aspect,
            {
                "input_text": input_text,
                "output_text": output_text,
                "hypothesis": hypothesis_text,
            },
        )
        last_exc: ParseError | None = None
        last_text = ""
        last_fp = ""
        for attempt in (None, 1):
            req = CompletionRequest(
                model=self.model,
                system_prompt=system,
                user_prompt=user,
                temperature=self.temperature,
                max_tokens=self.max_tokens,
                seed_hint=attempt,
            )
            result = self.gateway.complete(req)
            last_text, last_fp = result.text, result.request_fingerprint
            try:
                score = parse_final_score(
                    result.text, self.aspect.score_min, self.aspect.score_max
                )
                return score, result.request_fingerprint
            except ParseError as exc:
                last_exc = exc
                log.warning("unparseable judge reply (%s); retrying", exc)
        raise ScoreUnparseableError(
            f"judge reply unparseable after retry: {last_exc}", last_text, last_fp
        )

    def score_jobs(
        self,
        jobs: Sequence[tuple[str, str, str]],
        capture_gateway_errors: bool = False,
    ) -> list[ScoreOutcome]:
        """Score many (input, output, rubric) jobs with bounded parallelism.

        Results keep job order. Unparseable replies become outcomes with
        score=None; gateway errors do too when requested (auth errors always
        propagate).
        """

        def run(job: tuple[str, str, str]) -> ScoreOutcome:
            try:
                score, fp = self.score_one(*job)
                return ScoreOutcome(score=score, fingerprint=fp)
            except ScoreUnparseableError as exc:
                return ScoreOutcome(
                    score=None, fingerprint=exc.fingerprint, error=str(exc)
                )
            except AuthError:
                raise
            except GatewayError as exc:
                if capture_gateway_errors:
                    return ScoreOutcome(score=None, fingerprint="", error=str(exc))
                raise

        if not jobs:
            return []
        if self.max_inflight == 1 or len(jobs) == 1:
            return [run(job) for job in jobs]
        with ThreadPoolExecutor(max_workers=self.max_inflight) as pool:
            return list(pool.map(run, jobs))


def rank_by_correlation(
    predictions: Mapping[str, Sequence[float]],
    human_scores: Sequence[float],
    h_eval: int,
    tie_break_rewards: Mapping[str, float] | None = None,
) -> list[str]:
    """Rank rubric ids by Pearson correlation with the human scores.

    Returns the top h_eval ids, best first. Ties break by reward
    (descending) then id (ascending). Constant predictions correlate 0 by
    convention.
    """
    if h_eval < 1:
        raise ValueError("h_eval must be positive")
    rewards = tie_break_rewards or {}
    scored: list[tuple[float, float, str]] = []
    for hid in predictions:
        corr = pearson(predictions[hid], human_scores)
        scored.append((corr, rewards.get(hid, 0.0), hid))
    scored.sort(key=lambda row: (-row[0], -row[1], row[2]))
    return [hid for _, _, hid in scored[:h_eval]]


def select_hypotheses(
    bank: HypothesisBank,
    samples: Sequence[LabeledSample],
    scorer: RubricScorer,
) -> HypothesisBank:
    """Mark the h_eval rubrics that track human scores best on `samples`.

    Every bank rubric is scored on every sample (cached cells are free
    repeats of the union-merge rescoring). A scoring failure here aborts:
    selection needs the complete prediction matrix.
    """
    cfg = bank.hyperparams
    if not bank.hypotheses:
        raise SelectionError("bank has no hypotheses")
    if any(s.human_score is None for s in samples):
        raise SelectionError("selection needs human scores on every sample")
    if len(samples) < 2:
        raise SelectionError("selection needs at least two samples")
    h_eval = cfg.h_eval
    if len(bank.hypotheses) < h_eval:
        log.warning(
            "bank holds %d hypotheses, fewer than h_eval=%d; selecting all",
            len(bank.hypotheses), h_eval,
        )
        h_eval = len(bank.hypotheses)

    predictions: dict[str, list[float]] = {}
    for h in bank.hypotheses:
        outcomes = scorer.score_jobs(
            [(s.input_text, s.output_text, h.text) for s in samples]
        )
        failed = [o for o in outcomes if o.score is None]
        if failed:
            raise SelectionError(
                f"hypothesis {h.id}: {len(failed)} unscorable samples: "
                f"{failed[0].error}"
            )
        predictions[h.id] = [o.score for o in outcomes]  # type: ignore[misc]

    humans = [s.human_score for s in samples]
    rewards = {h.id: h.reward for h in bank.hypotheses}
    selected = rank_by_correlation(predictions, humans, h_eval, rewards)
    return dataclasses.replace(
        bank, selected_ids=tuple(selected), phase="selected"
    )


def evaluate(
    samples: Sequence[LabeledSample],
    bank: HypothesisBank,
    scorer: RubricScorer,
) -> list[ScoreRecord]:
    """Score every sample with every selected rubric; final = the mean.

    A sample with any unparseable rubric reply is emitted with a null
    final score, never dropped. Issues exactly |selected| * |samples|
    gateway requests when nothing needs a parse retry.
    """
    if not bank.selected_ids:
        raise ValueError("bank has no selected hypotheses; run selection first")
    selected = [bank.get(hid) for hid in bank.selected_ids]
    jobs = [
        (s.input_text, s.output_text, h.text) for s in samples for h in selected
    ]
    outcomes = scorer.score_jobs(jobs)

    records: list[ScoreRecord] = []
    idx = 0
    for s in samples:
        per_hyp: dict[str, HypothesisScore] = {}
        for h in selected:
            out = outcomes[idx]
            idx += 1
            per_hyp[h.id] = HypothesisScore(
                score=out.score, fingerprint=out.fingerprint, error=out.error
            )
        parsed = [v.score for v in per_hyp.values()]
        if all(p is not None for p in parsed):
            final = sum(parsed) / len(parsed)  # type: ignore[arg-type]
        else:
            final = None
            log.warning("sample %s has unparseable rubric scores", s.sample_id)
        records.append(
            ScoreRecord(
                sample_id=s.sample_id,
                group_id=s.group_id,
                per_hypothesis=per_hyp,
                final_score=final,
            )
        )
    return records


def save_scores(path: str | Path, records: Sequence[ScoreRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def load_scores(path: str | Path) -> list[dict]:
    """Read a scores JSONL file back as plain dicts (for meta-evaluation)."""
    rows: list[dict] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from None
    return rows
