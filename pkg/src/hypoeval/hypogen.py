"""Hypothesis generation: seed a rubric bank, update it on training samples,
refine from collectively mispredicted samples, and merge with a
literature-only bank.

Stage layout follows the bank's `phase` marker so an interrupted run can be
resumed from its serialized bank: "update-loop" banks re-enter the loop at
step+1, "merged" banks go straight to selection.
"""

from __future__ import annotations

import dataclasses
import logging
import random
import time
from dataclasses import dataclass
from typing import Sequence

from .evaluator import RubricScorer, select_hypotheses
from .gateway import CompletionRequest, Gateway
from .prompts import (
    ParseError,
    PromptLibrary,
    render_hypothesis_listing,
    render_observations,
    parse_yes_no,
)
from .rewards import PredictionLog, is_wrong_step, record_outcome, top_k
from .types import (
    AspectSpec,
    HypoGenConfig,
    Hypothesis,
    HypothesisBank,
    LabeledSample,
    LiteratureCorpus,
    LiteratureSummary,
)

log = logging.getLogger(__name__)

GEN_MAX_TOKENS = 2048
REPETITION_MAX_TOKENS = 256
SUMMARY_MAX_TOKENS = 1024
PAPER_CHAR_BUDGET = 24000


class GenerationError(RuntimeError):
    """Hypothesis generation could not continue."""


@dataclass(frozen=True, slots=True)
class GenContext:
    """Everything the generation stages share."""

    aspect: AspectSpec
    cfg: HypoGenConfig
    gateway: Gateway
    prompts: PromptLibrary
    gen_model: str
    eval_model: str
    literature: LiteratureCorpus = LiteratureCorpus()
    max_inflight: int = 8

    def scorer(self) -> RubricScorer:
        return RubricScorer(
            gateway=self.gateway,
            prompts=self.prompts,
            aspect=self.aspect,
            model=self.eval_model,
            temperature=self.cfg.eval_temperature,
            max_inflight=self.max_inflight,
        )


def summarize_literature(
    papers: Sequence[tuple[str, str]],
    aspect: AspectSpec,
    gateway: Gateway,
    prompts: PromptLibrary,
    model: str,
    temperature: float = 0.7,
) -> LiteratureCorpus:
    """Summarize each (source_id, text) paper; empty input, empty corpus."""
    summaries: list[LiteratureSummary] = []
    for source_id, text in papers:
        if len(text) > PAPER_CHAR_BUDGET:
            text = text[:PAPER_CHAR_BUDGET] + " ...[truncated]"
        system, user = prompts.render(
            "lit_summarize", aspect, {"paper_text": text}
        )
        result = gateway.complete(
            CompletionRequest(
                model=model,
                system_prompt=system,
                user_prompt=user,
                temperature=temperature,
                max_tokens=SUMMARY_MAX_TOKENS,
            )
        )
        summaries.append(
            LiteratureSummary(source_id=source_id, summary_text=result.text.strip())
        )
    if not summaries:
        log.warning("no papers given; generation will run literature-free")
    return LiteratureCorpus(summaries=tuple(summaries))


def order_training_samples(
    samples: Sequence[LabeledSample], cfg: HypoGenConfig
) -> tuple[list[LabeledSample], list[LabeledSample]]:
    """Seeded shuffle of the training set; first s_init_size seed the bank."""
    if len(samples) <= cfg.s_init_size:
        raise GenerationError(
            f"need more than s_init_size={cfg.s_init_size} training samples, "
            f"got {len(samples)}"
        )
    ordered = sorted(samples, key=lambda s: (s.group_id, s.sample_id))
    random.Random(f"{cfg.rng_seed}|train-order").shuffle(ordered)
    return ordered[: cfg.s_init_size], ordered[cfg.s_init_size :]


def _next_id_index(hypotheses: Sequence[Hypothesis]) -> int:
    highest = 0
    for h in hypotheses:
        if h.id.startswith("h") and h.id[1:].isdigit():
            highest = max(highest, int(h.id[1:]))
    return highest + 1


def _ask_hypotheses(
    ctx: GenContext, template_id: str, variables: dict[str, str], expected: int
) -> list[str]:
    """One generation call; re-asks once on a parse failure or short count."""
    system, user = ctx.prompts.render(
        template_id, ctx.aspect, {"num_hypotheses": str(expected), **variables}
    )
    last_error: ParseError | None = None
    for attempt in (None, 1):
        result = ctx.gateway.complete(
            CompletionRequest(
                model=ctx.gen_model,
                system_prompt=system,
                user_prompt=user,
                temperature=ctx.cfg.gen_temperature,
                max_tokens=GEN_MAX_TOKENS,
                seed_hint=attempt,
            )
        )
        from .prompts import parse_hypothesis_list

        try:
            texts = parse_hypothesis_list(result.text, expected)
        except ParseError as exc:
            last_error = exc
            continue
        if len(texts) == expected or attempt is not None:
            return texts
        log.warning("re-asking %s: got %d of %d hypotheses",
                    template_id, len(texts), expected)
    raise GenerationError(
        f"{template_id} reply unparseable after one retry: {last_error}"
    )


def _seed_hypothesis(
    ctx: GenContext,
    scorer: RubricScorer,
    hyp_id: str,
    text: str,
    origin: str,
    created_at_step: int,
    seed_samples: Sequence[LabeledSample],
) -> Hypothesis | None:
    """Score a fresh rubric on its seeding samples and fold the outcomes.

    Failed calls skip that sample with a warning; returns None when every
    call failed.
    """
    h = Hypothesis(
        id=hyp_id,
        text=text,
        origin=origin,
        created_at_step=created_at_step,
        n_seen=0,
        sum_sq_err=0.0,
        reward=0.0,
        seen_sample_ids=(),
        last_update_step=created_at_step,
    )
    outcomes = scorer.score_jobs(
        [(s.input_text, s.output_text, text) for s in seed_samples],
        capture_gateway_errors=True,
    )
    for sample, out in zip(seed_samples, outcomes):
        if out.score is None:
            log.warning(
                "seeding %s: sample %s unscorable (%s); skipped",
                hyp_id, sample.sample_id, out.error,
            )
            continue
        h = record_outcome(
            h, sample.sample_id, out.score, sample.human_score,
            created_at_step, ctx.cfg,
        )
    if h.n_seen == 0:
        log.warning("dropping %s: every seeding call failed", hyp_id)
        return None
    return h


def generate_initial(ctx: GenContext, s_init: Sequence[LabeledSample]) -> HypothesisBank:
    """Propose the first rubrics from the seed samples and the literature."""
    ctx.cfg.validate_for_aspect(ctx.aspect)
    obs = render_observations(s_init, ctx.aspect, ctx.cfg.obs_char_budget)
    texts = _ask_hypotheses(
        ctx,
        "generate",
        {
            "observations": obs.text,
            "relevant_papers": ctx.literature.concatenated,
        },
        expected=ctx.cfg.n_init_hypotheses,
    )
    scorer = ctx.scorer()
    hypotheses: list[Hypothesis] = []
    next_index = 1
    for text in texts:
        h = _seed_hypothesis(
            ctx, scorer, f"h{next_index:03d}", text, "initial", 0, s_init
        )
        next_index += 1
        if h is not None:
            hypotheses.append(h)
    if not hypotheses:
        raise GenerationError("no initial hypothesis survived seeding")
    return HypothesisBank(
        aspect=ctx.aspect,
        hyperparams=ctx.cfg,
        generator_model=ctx.gen_model,
        hypotheses=tuple(hypotheses),
        step=0,
        phase="update-loop",
    )


def refine_from_wrong_bank(
    ctx: GenContext,
    w_samples: Sequence[LabeledSample],
    t: int,
    next_index: int,
) -> list[Hypothesis]:
    """Generate replacement rubrics from the mispredicted samples.

    Round 0 generates from the samples alone; rounds 1..n_refine alternate
    refining with data (odd) and literature (even). With no literature the
    even rounds fall back to data.
    """
    obs = render_observations(w_samples, ctx.aspect, ctx.cfg.obs_char_budget)
    texts = _ask_hypotheses(
        ctx,
        "generate",
        {"observations": obs.text, "relevant_papers": ""},
        expected=ctx.cfg.n_init_hypotheses,
    )
    for i in range(1, ctx.cfg.n_refine + 1):
        with_literature = i % 2 == 0 and bool(ctx.literature)
        listing = render_hypothesis_listing(texts)
        if with_literature:
            texts = _ask_hypotheses(
                ctx,
                "refine_with_literature",
                {
                    "hypotheses": listing,
                    "relevant_papers": ctx.literature.concatenated,
                },
                expected=len(texts),
            )
        else:
            texts = _ask_hypotheses(
                ctx,
                "refine_with_data",
                {"hypotheses": listing, "observations": obs.text},
                expected=len(texts),
            )
    scorer = ctx.scorer()
    refined: list[Hypothesis] = []
    for text in texts:
        h = _seed_hypothesis(
            ctx, scorer, f"h{next_index:03d}", text,
            "wrong-bank-refined", t, w_samples,
        )
        next_index += 1
        if h is not None:
            refined.append(h)
    return refined


def _bank_order(hypotheses: Sequence[Hypothesis]) -> tuple[Hypothesis, ...]:
    return tuple(sorted(hypotheses, key=lambda h: (h.created_at_step, h.id)))


def run_update_loop(
    ctx: GenContext,
    bank: HypothesisBank,
    s_update: Sequence[LabeledSample],
    stop_after: int | None = None,
    trigger_steps: list[int] | None = None,
) -> HypothesisBank:
    """Consume update samples one at a time, rewarding the top rubrics.

    `bank.step` counts samples already consumed, so passing the full ordered
    update set resumes a partial run. A sample collectively mispredicted by
    at least w_hyp of the top rubrics joins the wrong bank; when that bank
    reaches w_max, refined rubrics are generated, the strongest h_max of the
    merge pool survive, and the wrong bank flushes.
    """
    cfg = ctx.cfg
    scorer = ctx.scorer()
    by_id = {s.sample_id: s for s in s_update}
    for t, sample in enumerate(s_update, start=1):
        if t <= bank.step:
            continue
        if stop_after is not None and t > stop_after:
            break
        if sample.human_score is None:
            raise GenerationError(f"update sample {sample.sample_id} has no score")
        top = top_k(bank.hypotheses, cfg.k)
        outcomes = scorer.score_jobs(
            [(sample.input_text, sample.output_text, h.text) for h in top],
            capture_gateway_errors=True,
        )
        logs: list[PredictionLog] = []
        failures = 0
        for h, out in zip(top, outcomes):
            if out.score is None:
                failures += 1
                log.warning(
                    "step %d: %s unscorable on %s (%s); counted as a miss",
                    t, h.id, sample.sample_id, out.error,
                )
                continue
            logs.append(
                PredictionLog(h.id, sample.sample_id, out.score, sample.human_score)
            )
            bank = bank.replace_hypothesis(
                record_outcome(h, sample.sample_id, out.score,
                               sample.human_score, t, cfg)
            )
        wrong = is_wrong_step(logs, cfg, extra_misses=failures)
        wrong_bank = bank.wrong_bank + ((sample.sample_id,) if wrong else ())
        bank = dataclasses.replace(bank, step=t, wrong_bank=wrong_bank)

        if len(bank.wrong_bank) >= cfg.w_max:
            if trigger_steps is not None:
                trigger_steps.append(t)
            log.info("step %d: wrong bank full (%d); refining", t, len(bank.wrong_bank))
            w_samples = [by_id[sid] for sid in bank.wrong_bank]
            refined = refine_from_wrong_bank(
                ctx, w_samples, t, _next_id_index(bank.hypotheses)
            )
            if cfg.merge_pool == "top":
                pool = top_k(bank.hypotheses, cfg.k) + refined
            else:
                pool = list(bank.hypotheses) + refined
            survivors = top_k(pool, cfg.h_max)
            bank = dataclasses.replace(
                bank,
                hypotheses=_bank_order(survivors),
                wrong_bank=(),
            )
    return bank


def _check_repetition(ctx: GenContext, keeper: str, candidate: str) -> bool:
    """Ask whether two rubrics repeat each other; unparseable means no."""
    system, user = ctx.prompts.render(
        "check_repetition",
        ctx.aspect,
        {"hypotheses": render_hypothesis_listing([keeper, candidate])},
    )
    result = ctx.gateway.complete(
        CompletionRequest(
            model=ctx.gen_model,
            system_prompt=system,
            user_prompt=user,
            temperature=ctx.cfg.eval_temperature,
            max_tokens=REPETITION_MAX_TOKENS,
        )
    )
    try:
        return parse_yes_no(result.text)
    except ParseError as exc:
        log.warning("repetition check unparseable (%s); keeping both", exc)
        return False


def _dedup_ordered(ctx: GenContext, ordered: list[Hypothesis]) -> list[Hypothesis]:
    """Drop later members that repeat an earlier (higher-priority) one."""
    kept: list[Hypothesis] = []
    for candidate in ordered:
        if any(_check_repetition(ctx, k.text, candidate.text) for k in kept):
            log.info("dropping %s as repetitive within its bank", candidate.id)
            continue
        kept.append(candidate)
    return kept


def union_merge(
    ctx: GenContext, bank: HypothesisBank, s_tr: Sequence[LabeledSample]
) -> HypothesisBank:
    """Merge the data-driven bank with a literature-only bank.

    Repetitive pairs collapse (within each bank the higher-priority member
    survives; across banks the literature side survives), then at most
    h_max/2 seeded-random survivors of each side form the final bank, and
    every member is scored on all of s_tr so selection sees complete
    prediction matrices.
    """
    cfg = ctx.cfg
    t_final = bank.step
    next_index = _next_id_index(bank.hypotheses)

    lit_hyps: list[Hypothesis] = []
    if ctx.literature:
        lit_texts = _ask_hypotheses(
            ctx,
            "generate",
            {"observations": "", "relevant_papers": ctx.literature.concatenated},
            expected=cfg.n_init_hypotheses,
        )
        for text in lit_texts:
            lit_hyps.append(
                Hypothesis(
                    id=f"h{next_index:03d}",
                    text=text,
                    origin="literature-only",
                    created_at_step=t_final,
                    n_seen=0,
                    sum_sq_err=0.0,
                    reward=0.0,
                    seen_sample_ids=(),
                    last_update_step=t_final,
                )
            )
            next_index += 1
    else:
        log.warning("no literature corpus; merging from the data bank alone")

    # generation order is the priority order for unscored literature rubrics
    lit_kept = _dedup_ordered(ctx, lit_hyps)
    data_ranked = (
        top_k(bank.hypotheses, len(bank.hypotheses)) if bank.hypotheses else []
    )
    data_kept = _dedup_ordered(ctx, data_ranked)
    cross_kept: list[Hypothesis] = []
    for h in data_kept:
        if any(_check_repetition(ctx, l.text, h.text) for l in lit_kept):
            log.info("dropping %s: repeats a literature rubric", h.id)
            continue
        cross_kept.append(h)

    half = cfg.h_max // 2
    rng = random.Random(f"{cfg.rng_seed}|union-pick")
    picked_lit = lit_kept if len(lit_kept) <= half else rng.sample(lit_kept, half)
    picked_data = (
        cross_kept if len(cross_kept) <= half else rng.sample(cross_kept, half)
    )
    members = list(picked_lit) + list(picked_data)
    if not members:
        raise GenerationError("union merge produced an empty bank")

    scorer = ctx.scorer()
    rescored: list[Hypothesis] = []
    for h in members:
        missing = [s for s in s_tr if s.sample_id not in h.seen_sample_ids]
        outcomes = scorer.score_jobs(
            [(s.input_text, s.output_text, h.text) for s in missing],
            capture_gateway_errors=True,
        )
        for sample, out in zip(missing, outcomes):
            if out.score is None:
                log.warning(
                    "rescoring %s: sample %s unscorable (%s); skipped",
                    h.id, sample.sample_id, out.error,
                )
                continue
            h = record_outcome(
                h, sample.sample_id, out.score, sample.human_score, t_final, cfg
            )
        if h.n_seen == 0:
            log.warning("dropping %s: rescoring failed on every sample", h.id)
            continue
        rescored.append(h)
    if not rescored:
        raise GenerationError("every merged hypothesis failed rescoring")
    return dataclasses.replace(
        bank,
        hypotheses=_bank_order(rescored),
        wrong_bank=(),
        phase="merged",
    )


def generate_bank(
    ctx: GenContext,
    s_tr: Sequence[LabeledSample],
    resume_bank: HypothesisBank | None = None,
    stop_after: int | None = None,
) -> tuple[HypothesisBank, dict]:
    """Run the full generation pipeline over the training set.

    Returns the final bank (selected, unless stopped early) and a run
    manifest. With `resume_bank`, continues from its phase and step; the
    sample order is re-derived from the config seed, so the resumed run
    matches an uninterrupted one given a warm cache or a deterministic
    provider.
    """
    cfg = ctx.cfg
    started = time.monotonic()
    stats_before = dataclasses.replace(ctx.gateway.stats)
    s_init, s_update = order_training_samples(s_tr, cfg)
    triggers: list[int] = []

    if resume_bank is not None:
        if resume_bank.aspect.aspect_id != ctx.aspect.aspect_id:
            raise GenerationError(
                f"resume bank is for aspect {resume_bank.aspect.aspect_id!r}, "
                f"not {ctx.aspect.aspect_id!r}"
            )
        if resume_bank.hyperparams != cfg:
            raise GenerationError("resume bank was built with different hyperparameters")
        bank = resume_bank
    else:
        bank = generate_initial(ctx, s_init)

    stopped_early = False
    if bank.phase == "update-loop":
        bank = run_update_loop(ctx, bank, s_update, stop_after, triggers)
        stopped_early = bank.step < len(s_update)
        if not stopped_early:
            bank = union_merge(ctx, bank, s_tr)
    if bank.phase == "merged":
        bank = select_hypotheses(bank, list(s_tr), ctx.scorer())

    stats = ctx.gateway.stats
    manifest = {
        "aspect_id": ctx.aspect.aspect_id,
        "task_id": ctx.aspect.task_id,
        "generator_model": ctx.gen_model,
        "eval_model": ctx.eval_model,
        "seed": cfg.rng_seed,
        "config": cfg.to_dict(),
        "n_train": len(s_tr),
        "s_init_ids": [s.sample_id for s in s_init],
        "refinement_trigger_steps": triggers,
        "phase": bank.phase,
        "n_hypotheses": len(bank.hypotheses),
        "selected_ids": list(bank.selected_ids),
        "requests": stats.requests - stats_before.requests,
        "cache_hits": stats.cache_hits - stats_before.cache_hits,
        "provider_calls": stats.provider_calls - stats_before.provider_calls,
        "wall_time_s": round(time.monotonic() - started, 3),
    }
    return bank, manifest
