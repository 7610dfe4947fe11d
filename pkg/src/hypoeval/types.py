"""Domain types, dataset validation, and bank (de)serialization.

Everything here is an immutable value object; pipeline stages produce new
values instead of mutating. The bank file format is versioned (currently "1")
and `parse_bank` rejects anything it cannot prove consistent.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

BANK_FORMAT_VERSION = "1"
CORPUS_FORMAT_VERSION = "1"

HYPOTHESIS_ORIGINS = ("initial", "wrong-bank-refined", "literature-only")
BANK_PHASES = ("update-loop", "merged", "selected")


class DatasetError(ValueError):
    """Invalid dataset content."""


class EmptyDatasetError(DatasetError):
    pass


class DuplicateSampleIdError(DatasetError):
    pass


class ConfigError(ValueError):
    """Invalid generation hyperparameters."""


class BankFormatError(ValueError):
    """Bank file is malformed or violates an invariant."""


class UnsupportedVersionError(BankFormatError):
    pass


# Noun sets used to instantiate the prompt templates for the two built-in
# task flavors. Aspect files may override any key.
DEFAULT_TASK_NOUNS: dict[str, dict[str, str]] = {
    "summarization": {
        "output_noun": "summary",
        "output_plural": "summaries",
        "input_plural": "source texts",
        "unit_phrase": "a summary of a passage",
        "pair_phrase": "a set of summaries and their source texts",
        "eval_intro_phrase": "a summary of a story",
        "eval_given_list": "story, the summary",
        "eval_given_short": "story, summary",
        "input_label": "Story",
        "input_token": "story",
        "output_label": "Summary",
        "output_token": "summary",
        "truncation_note": "",
    },
    "story_generation": {
        "output_noun": "story",
        "output_plural": "stories",
        "input_plural": "prompts",
        "unit_phrase": "a written story of a given prompt",
        "pair_phrase": "a set of stories and their prompts",
        "eval_intro_phrase": "a written story of a given prompt",
        "eval_given_list": "prompt, the written story",
        "eval_given_short": "prompt, story",
        "input_label": "Prompt",
        "input_token": "prompt",
        "output_label": "Story",
        "output_token": "story",
        "truncation_note": (
            "Note: the story may have been abruptly cut in the middle of a"
            " sentence. Please rate it as if they ended just before the"
            " unfinished sentence."
        ),
    },
}


@dataclass(frozen=True, slots=True)
class AspectSpec:
    """One evaluation aspect of one task (e.g. coherence of summaries)."""

    task_id: str
    aspect_id: str
    definition: str
    score_min: float = 1.0
    score_max: float = 5.0
    task_nouns: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.task_id or not self.aspect_id:
            raise ValueError("task_id and aspect_id must be non-empty")
        if not self.definition:
            raise ValueError("aspect definition must be non-empty")
        if not self.score_min < self.score_max:
            raise ValueError("score_min must be strictly below score_max")
        object.__setattr__(self, "task_nouns", dict(self.task_nouns))

    def nouns(self) -> dict[str, str]:
        """Task nouns with per-aspect overrides applied over the task preset."""
        base = dict(DEFAULT_TASK_NOUNS.get(self.task_id, {}))
        base.update(self.task_nouns)
        if not base:
            raise ConfigError(
                f"no noun preset for task {self.task_id!r}; supply task_nouns"
            )
        return base

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "aspect_id": self.aspect_id,
            "definition": self.definition,
            "score_min": self.score_min,
            "score_max": self.score_max,
            "task_nouns": dict(self.task_nouns),
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "AspectSpec":
        try:
            return cls(
                task_id=raw["task_id"],
                aspect_id=raw["aspect_id"],
                definition=raw["definition"],
                score_min=float(raw.get("score_min", 1.0)),
                score_max=float(raw.get("score_max", 5.0)),
                task_nouns=dict(raw.get("task_nouns", {})),
            )
        except KeyError as exc:
            raise DatasetError(f"aspect file missing key {exc}") from None


@dataclass(frozen=True, slots=True)
class LabeledSample:
    """One (input, output) pair, optionally with a human score."""

    group_id: str
    sample_id: str
    input_text: str
    output_text: str
    human_score: float | None = None

    def __post_init__(self) -> None:
        if not self.group_id or not self.sample_id:
            raise ValueError("group_id and sample_id must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "group_id": self.group_id,
            "sample_id": self.sample_id,
            "input": self.input_text,
            "output": self.output_text,
            "score": self.human_score,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "LabeledSample":
        try:
            score = raw.get("score")
            return cls(
                group_id=str(raw["group_id"]),
                sample_id=str(raw["sample_id"]),
                input_text=raw["input"],
                output_text=raw["output"],
                human_score=None if score is None else float(score),
            )
        except KeyError as exc:
            raise DatasetError(f"dataset row missing key {exc}") from None


@dataclass(frozen=True, slots=True)
class HypoGenConfig:
    """Hyperparameters for hypothesis generation and selection."""

    s_init_size: int = 5
    n_init_hypotheses: int = 5
    k: int = 10
    theta: float = 0.5
    alpha: float = 0.5
    w_max: int = 10
    n_refine: int = 6
    h_max: int = 20
    a: float = 1.0
    b: float = 1.0 / 16.0
    h_eval: int = 5
    w_hyp: int = 5
    rng_seed: int = 42
    merge_pool: str = "top"
    obs_char_budget: int = 6000
    gen_temperature: float = 0.7
    eval_temperature: float = 0.0

    def __post_init__(self) -> None:
        for name in ("s_init_size", "n_init_hypotheses", "k", "w_max",
                     "n_refine", "h_max", "h_eval", "w_hyp"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.h_eval > self.h_max:
            raise ConfigError("h_eval must not exceed h_max")
        if self.theta <= 0:
            raise ConfigError("theta must be positive")
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")
        if self.b < 0:
            raise ConfigError("b must be non-negative")
        if self.merge_pool not in ("top", "full_bank"):
            raise ConfigError("merge_pool must be 'top' or 'full_bank'")
        if self.obs_char_budget < 1:
            raise ConfigError("obs_char_budget must be positive")

    def validate_for_aspect(self, aspect: AspectSpec) -> None:
        """Reject configs whose exploitation term can go negative on scale."""
        span = aspect.score_max - aspect.score_min
        if self.b * span * span > self.a:
            raise ConfigError(
                f"b*(score span)^2 = {self.b * span * span:g} exceeds a = "
                f"{self.a:g}; per-sample reward would go negative"
            )

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "HypoGenConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**dict(raw))


@dataclass(frozen=True, slots=True)
class Hypothesis:
    """One scoring rubric plus its running reward bookkeeping.

    `last_update_step` is the step index the stored reward was computed at;
    the stored reward is a cache and is recomputed from the other fields
    when a bank is parsed.
    """

    id: str
    text: str
    origin: str
    created_at_step: int
    n_seen: int
    sum_sq_err: float
    reward: float
    seen_sample_ids: tuple[str, ...]
    last_update_step: int

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("hypothesis id must be non-empty")
        if not self.text.strip():
            raise ValueError("hypothesis text must be non-empty")
        if self.origin not in HYPOTHESIS_ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")
        if self.n_seen < 0 or self.created_at_step < 0 or self.last_update_step < 0:
            raise ValueError("counters must be non-negative")
        if self.n_seen != len(self.seen_sample_ids):
            raise ValueError("n_seen must equal len(seen_sample_ids)")
        if len(set(self.seen_sample_ids)) != len(self.seen_sample_ids):
            raise ValueError("seen_sample_ids must be unique")
        if self.sum_sq_err < 0:
            raise ValueError("sum_sq_err must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "text": self.text,
            "origin": self.origin,
            "created_at_step": self.created_at_step,
            "n_seen": self.n_seen,
            "sum_sq_err": self.sum_sq_err,
            "reward": self.reward,
            "seen_sample_ids": list(self.seen_sample_ids),
            "last_update_step": self.last_update_step,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "Hypothesis":
        try:
            return cls(
                id=raw["id"],
                text=raw["text"],
                origin=raw["origin"],
                created_at_step=int(raw["created_at_step"]),
                n_seen=int(raw["n_seen"]),
                sum_sq_err=float(raw["sum_sq_err"]),
                reward=float(raw["reward"]),
                seen_sample_ids=tuple(raw["seen_sample_ids"]),
                last_update_step=int(raw["last_update_step"]),
            )
        except KeyError as exc:
            raise BankFormatError(f"hypothesis record missing key {exc}") from None


@dataclass(frozen=True, slots=True)
class HypothesisBank:
    """The evolving rubric population for one aspect."""

    aspect: AspectSpec
    hyperparams: HypoGenConfig
    generator_model: str
    hypotheses: tuple[Hypothesis, ...] = ()
    wrong_bank: tuple[str, ...] = ()
    step: int = 0
    selected_ids: tuple[str, ...] = ()
    phase: str = "update-loop"

    def __post_init__(self) -> None:
        if self.step < 0:
            raise ValueError("step must be non-negative")
        if self.phase not in BANK_PHASES:
            raise ValueError(f"unknown bank phase {self.phase!r}")
        ids = [h.id for h in self.hypotheses]
        if len(set(ids)) != len(ids):
            raise ValueError("hypothesis ids must be unique")
        missing = set(self.selected_ids) - set(ids)
        if missing:
            raise ValueError(f"selected_ids not in bank: {sorted(missing)}")

    def get(self, hypothesis_id: str) -> Hypothesis:
        for h in self.hypotheses:
            if h.id == hypothesis_id:
                return h
        raise KeyError(hypothesis_id)

    def replace_hypothesis(self, updated: Hypothesis) -> "HypothesisBank":
        replaced = tuple(
            updated if h.id == updated.id else h for h in self.hypotheses
        )
        if all(h.id != updated.id for h in replaced):
            raise KeyError(updated.id)
        return dataclasses.replace(self, hypotheses=replaced)

    def next_hypothesis_id(self) -> str:
        highest = 0
        for h in self.hypotheses:
            if h.id.startswith("h") and h.id[1:].isdigit():
                highest = max(highest, int(h.id[1:]))
        return f"h{highest + 1:03d}"


@dataclass(frozen=True, slots=True)
class HypothesisScore:
    """Per-rubric outcome for one sample; score is None when unparseable."""

    score: float | None
    fingerprint: str
    error: str | None = None


@dataclass(frozen=True, slots=True)
class ScoreRecord:
    """Final evaluation of one sample: per-rubric scores and their mean."""

    sample_id: str
    group_id: str
    per_hypothesis: Mapping[str, HypothesisScore]
    final_score: float | None

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_hypothesis", dict(self.per_hypothesis))
        parsed = [s.score for s in self.per_hypothesis.values()]
        if parsed and all(s is not None for s in parsed):
            mean = sum(parsed) / len(parsed)
            if self.final_score is None or abs(self.final_score - mean) > 1e-12:
                raise ValueError("final_score must be the mean of parsed scores")

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "group_id": self.group_id,
            "per_hypothesis": {
                hid: s.score for hid, s in sorted(self.per_hypothesis.items())
            },
            "final_score": self.final_score,
            "fingerprints": {
                hid: s.fingerprint for hid, s in sorted(self.per_hypothesis.items())
            },
        }


@dataclass(frozen=True, slots=True)
class GroupCorrelation:
    n: int
    spearman: float
    pearson: float
    all_equal: bool = False


@dataclass(frozen=True, slots=True)
class SkippedGroup:
    group_id: str
    reason: str
    n: int


@dataclass(frozen=True, slots=True)
class CorrelationReport:
    """Meta-evaluation result: rank agreement with human annotations."""

    mode: str
    aggregate_spearman: float
    aggregate_pearson: float
    per_group: Mapping[str, GroupCorrelation] = field(default_factory=dict)
    skipped_groups: tuple[SkippedGroup, ...] = ()
    excluded_records: int = 0
    weighted: bool = False
    n_records: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_group", dict(self.per_group))
        for value in (self.aggregate_spearman, self.aggregate_pearson):
            if not -1.0 - 1e-9 <= value <= 1.0 + 1e-9:
                raise ValueError("aggregate correlations must lie in [-1, 1]")


@dataclass(frozen=True, slots=True)
class LiteratureSummary:
    source_id: str
    summary_text: str


@dataclass(frozen=True, slots=True)
class LiteratureCorpus:
    """Summaries of relevant papers, concatenated in input order."""

    summaries: tuple[LiteratureSummary, ...] = ()

    @property
    def concatenated(self) -> str:
        return "\n\n".join(s.summary_text for s in self.summaries)

    def __bool__(self) -> bool:
        return bool(self.summaries)

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": CORPUS_FORMAT_VERSION,
            "summaries": [
                {"source_id": s.source_id, "summary_text": s.summary_text}
                for s in self.summaries
            ],
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "LiteratureCorpus":
        version = raw.get("version")
        if version != CORPUS_FORMAT_VERSION:
            raise UnsupportedVersionError(
                f"unsupported literature corpus version {version!r}"
            )
        return cls(
            summaries=tuple(
                LiteratureSummary(s["source_id"], s["summary_text"])
                for s in raw.get("summaries", [])
            )
        )


@dataclass(frozen=True, slots=True)
class ValidationSummary:
    samples: int
    groups: int
    violations: int
    flagged: tuple[str, ...] = ()


def validate_dataset(
    samples: Sequence[LabeledSample],
    aspect: AspectSpec,
    require_scores: bool = True,
) -> ValidationSummary:
    """Count samples/groups and flag score-range violations.

    Duplicate sample ids and an empty dataset are fatal; out-of-range or
    missing scores are counted and flagged, the caller decides.
    """
    if not samples:
        raise EmptyDatasetError("dataset contains no samples")
    seen: set[str] = set()
    dupes: list[str] = []
    for s in samples:
        if s.sample_id in seen:
            dupes.append(s.sample_id)
        seen.add(s.sample_id)
    if dupes:
        raise DuplicateSampleIdError(f"duplicate sample ids: {sorted(set(dupes))}")

    flagged: list[str] = []
    for s in samples:
        if s.human_score is None:
            if require_scores:
                flagged.append(f"{s.sample_id}: missing score")
            continue
        if not aspect.score_min <= s.human_score <= aspect.score_max:
            flagged.append(
                f"{s.sample_id}: score {s.human_score:g} outside "
                f"[{aspect.score_min:g}, {aspect.score_max:g}]"
            )
    return ValidationSummary(
        samples=len(samples),
        groups=len({s.group_id for s in samples}),
        violations=len(flagged),
        flagged=tuple(flagged),
    )


def _dump_json(payload: Mapping[str, Any]) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def serialize_bank(bank: HypothesisBank) -> str:
    payload = {
        "version": BANK_FORMAT_VERSION,
        "aspect": bank.aspect.to_dict(),
        "hyperparams": bank.hyperparams.to_dict(),
        "generator_model": bank.generator_model,
        "step": bank.step,
        "phase": bank.phase,
        "hypotheses": [h.to_dict() for h in bank.hypotheses],
        "wrong_bank": list(bank.wrong_bank),
        "selected_ids": list(bank.selected_ids),
    }
    return _dump_json(payload)


def parse_bank(text: str) -> HypothesisBank:
    """Parse and re-validate a serialized bank.

    Stored rewards are caches: each is recomputed from (n_seen, sum_sq_err,
    last_update_step) and a mismatch is a format error.
    """
    from .rewards import update_reward  # deferred: rewards imports this module

    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BankFormatError(f"bank file is not valid JSON: {exc}") from None
    version = raw.get("version")
    if version != BANK_FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported bank version {version!r}")
    try:
        aspect = AspectSpec.from_dict(raw["aspect"])
        cfg = HypoGenConfig.from_dict(raw["hyperparams"])
        bank = HypothesisBank(
            aspect=aspect,
            hyperparams=cfg,
            generator_model=raw["generator_model"],
            hypotheses=tuple(Hypothesis.from_dict(h) for h in raw["hypotheses"]),
            wrong_bank=tuple(raw.get("wrong_bank", [])),
            step=int(raw["step"]),
            selected_ids=tuple(raw.get("selected_ids", [])),
            phase=raw.get("phase", "update-loop"),
        )
    except KeyError as exc:
        raise BankFormatError(f"bank file missing key {exc}") from None
    except (ValueError, ConfigError) as exc:
        raise BankFormatError(str(exc)) from None

    cfg.validate_for_aspect(aspect)
    if len(bank.wrong_bank) > cfg.w_max:
        raise BankFormatError(
            f"wrong bank holds {len(bank.wrong_bank)} samples, cap is {cfg.w_max}"
        )
    for h in bank.hypotheses:
        if h.n_seen == 0:
            continue
        expected = update_reward(h, h.last_update_step, cfg)
        if not math.isclose(h.reward, expected, rel_tol=1e-9, abs_tol=1e-9):
            raise BankFormatError(
                f"hypothesis {h.id}: stored reward {h.reward!r} does not match "
                f"recomputed {expected!r}"
            )
    return bank


def load_bank(path: str | Path) -> HypothesisBank:
    return parse_bank(Path(path).read_text(encoding="utf-8"))


def save_bank(path: str | Path, bank: HypothesisBank) -> None:
    Path(path).write_text(serialize_bank(bank), encoding="utf-8")


def load_samples(path: str | Path) -> list[LabeledSample]:
    """Read a dataset JSONL file (one sample object per line)."""
    rows: list[LabeledSample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(LabeledSample.from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from None
    if not rows:
        raise EmptyDatasetError(f"{path}: no samples")
    return rows


def save_samples(path: str | Path, samples: Sequence[LabeledSample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")


def load_aspect(path: str | Path) -> AspectSpec:
    with open(path, encoding="utf-8") as fh:
        return AspectSpec.from_dict(json.load(fh))


def save_aspect(path: str | Path, aspect: AspectSpec) -> None:
    Path(path).write_text(_dump_json(aspect.to_dict()), encoding="utf-8")


def load_corpus(path: str | Path) -> LiteratureCorpus:
    with open(path, encoding="utf-8") as fh:
        return LiteratureCorpus.from_dict(json.load(fh))


def save_corpus(path: str | Path, corpus: LiteratureCorpus) -> None:
    Path(path).write_text(_dump_json(corpus.to_dict()), encoding="utf-8")
