"""Adapters from public benchmark dumps to the normalized dataset schema,
plus the seeded train/test splitter.

Expected upstream layouts (the most common public releases):

* ``summeval``: JSONL; each row has ``id`` (source), ``model_id``,
  ``text`` (source document), ``decoded`` (summary), and
  ``expert_annotations`` (list of per-annotator dicts keyed by aspect).
  Annotator values are averaged.
* ``newsroom``: CSV with ``ArticleID``, ``System``, ``ArticleText``,
  ``SystemSummary`` and per-aspect rating columns (``CoherenceRating``,
  ``FluencyRating``, ``InformativenessRating``, ``RelevanceRating``); one
  row per annotator, averaged per (article, system).
* ``hanna``: CSV with ``Story ID``, ``Prompt``, ``Story`` and one column
  per aspect (``Relevance``, ``Coherence``, ``Empathy``, ``Surprise``,
  ``Engagement``, ``Complexity``); one row per annotator, averaged per
  story. Groups are the distinct prompts in first-appearance order.
* ``writingprompt``: CSV with ``prompt``, ``story``, optional ``id``, and
  one column per aspect (``grammaticality``, ``cohesiveness``,
  ``likability``, ``relevance``); rows sharing an id are averaged. Each
  pair is its own group.
* ``generic_csv``: CSV with ``group``, ``sample``, ``input``, ``output``,
  ``score``; rows pass through unchanged.
"""

from __future__ import annotations

import csv
import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .types import DatasetError, LabeledSample

log = logging.getLogger(__name__)

SOURCE_FORMATS = ("summeval", "newsroom", "hanna", "writingprompt", "generic_csv")

_NEWSROOM_COLUMNS = {
    "coherence": "CoherenceRating",
    "fluency": "FluencyRating",
    "informativeness": "InformativenessRating",
    "relevance": "RelevanceRating",
}


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def _require(row: dict, key: str, where: str) -> str:
    value = row.get(key)
    if value is None or value == "":
        raise DatasetError(f"{where}: missing column/field {key!r}")
    return value


def _parse_score(raw: object, where: str) -> float:
    try:
        return float(raw)  # type: ignore[arg-type]
    except (TypeError, ValueError):
        raise DatasetError(f"{where}: score {raw!r} is not a number") from None


def _convert_summeval(path: Path, aspect_id: str) -> list[LabeledSample]:
    samples: list[LabeledSample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path.name}:{lineno}"
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{where}: invalid JSON: {exc}") from None
            source_id = str(_require(row, "id", where))
            model_id = str(_require(row, "model_id", where))
            annotations = row.get("expert_annotations")
            if not annotations:
                raise DatasetError(f"{where}: no expert_annotations")
            values = []
            for ann in annotations:
                if aspect_id not in ann:
                    raise DatasetError(
                        f"{where}: aspect {aspect_id!r} not in annotations "
                        f"(has {sorted(ann)})"
                    )
                values.append(_parse_score(ann[aspect_id], where))
            samples.append(
                LabeledSample(
                    group_id=source_id,
                    sample_id=f"{source_id}::{model_id}",
                    input_text=_require(row, "text", where),
                    output_text=_require(row, "decoded", where),
                    human_score=_mean(values),
                )
            )
    return samples


def _read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DatasetError(f"{path.name}: empty CSV")
        return list(reader)


def _averaged(
    keyed_rows: dict[tuple, list[tuple[dict[str, str], float]]],
    build: Callable[[tuple, dict[str, str], float], LabeledSample],
) -> list[LabeledSample]:
    samples = []
    for key in keyed_rows:
        rows = keyed_rows[key]
        score = _mean([s for _, s in rows])
        samples.append(build(key, rows[0][0], score))
    return samples


def _convert_newsroom(path: Path, aspect_id: str) -> list[LabeledSample]:
    column = _NEWSROOM_COLUMNS.get(aspect_id)
    if column is None:
        raise DatasetError(
            f"newsroom has no aspect {aspect_id!r}; one of {sorted(_NEWSROOM_COLUMNS)}"
        )
    keyed: dict[tuple, list[tuple[dict[str, str], float]]] = {}
    for i, row in enumerate(_read_csv(path), start=2):
        where = f"{path.name}:{i}"
        key = (_require(row, "ArticleID", where), _require(row, "System", where))
        keyed.setdefault(key, []).append(
            (row, _parse_score(_require(row, column, where), where))
        )
    return _averaged(
        keyed,
        lambda key, row, score: LabeledSample(
            group_id=str(key[0]),
            sample_id=f"{key[0]}::{key[1]}",
            input_text=row.get("ArticleText", ""),
            output_text=row.get("SystemSummary", ""),
            human_score=score,
        ),
    )


def _convert_hanna(path: Path, aspect_id: str) -> list[LabeledSample]:
    rows = _read_csv(path)
    if not rows:
        raise DatasetError(f"{path.name}: no rows")
    # aspect columns are capitalized in the release
    column = None
    for name in rows[0]:
        if name.lower() == aspect_id.lower():
            column = name
            break
    if column is None:
        raise DatasetError(f"hanna dump has no column for aspect {aspect_id!r}")
    prompt_order: dict[str, str] = {}
    keyed: dict[tuple, list[tuple[dict[str, str], float]]] = {}
    for i, row in enumerate(rows, start=2):
        where = f"{path.name}:{i}"
        prompt = _require(row, "Prompt", where)
        if prompt not in prompt_order:
            prompt_order[prompt] = f"p{len(prompt_order) + 1:03d}"
        story_id = _require(row, "Story ID", where)
        keyed.setdefault((story_id,), []).append(
            (row, _parse_score(_require(row, column, where), where))
        )
    return _averaged(
        keyed,
        lambda key, row, score: LabeledSample(
            group_id=prompt_order[row["Prompt"]],
            sample_id=str(key[0]),
            input_text=row["Prompt"],
            output_text=row.get("Story", ""),
            human_score=score,
        ),
    )


def _convert_writingprompt(path: Path, aspect_id: str) -> list[LabeledSample]:
    rows = _read_csv(path)
    if not rows:
        raise DatasetError(f"{path.name}: no rows")
    column = None
    for name in rows[0]:
        if name.lower() == aspect_id.lower():
            column = name
            break
    if column is None:
        raise DatasetError(f"writingprompt dump has no column for {aspect_id!r}")
    keyed: dict[tuple, list[tuple[dict[str, str], float]]] = {}
    for i, row in enumerate(rows, start=2):
        where = f"{path.name}:{i}"
        sample_id = row.get("id") or f"wp{i - 1:04d}"
        keyed.setdefault((sample_id,), []).append(
            (row, _parse_score(_require(row, column, where), where))
        )
    return _averaged(
        keyed,
        lambda key, row, score: LabeledSample(
            group_id=str(key[0]),
            sample_id=str(key[0]),
            input_text=_require(row, "prompt", path.name),
            output_text=_require(row, "story", path.name),
            human_score=score,
        ),
    )


def _convert_generic_csv(path: Path, aspect_id: str) -> list[LabeledSample]:
    del aspect_id  # generic rows already carry a single score column
    samples = []
    for i, row in enumerate(_read_csv(path), start=2):
        where = f"{path.name}:{i}"
        samples.append(
            LabeledSample(
                group_id=_require(row, "group", where),
                sample_id=_require(row, "sample", where),
                input_text=row.get("input", ""),
                output_text=row.get("output", ""),
                human_score=_parse_score(_require(row, "score", where), where),
            )
        )
    return samples


def convert(source_format: str, in_path: str | Path, aspect_id: str) -> list[LabeledSample]:
    """Convert one benchmark dump to normalized samples."""
    path = Path(in_path)
    if not path.exists():
        raise DatasetError(f"input file {path} does not exist")
    converters = {
        "summeval": _convert_summeval,
        "newsroom": _convert_newsroom,
        "hanna": _convert_hanna,
        "writingprompt": _convert_writingprompt,
        "generic_csv": _convert_generic_csv,
    }
    if source_format not in converters:
        raise DatasetError(
            f"unknown source format {source_format!r}; one of {SOURCE_FORMATS}"
        )
    samples = converters[source_format](path, aspect_id)
    if not samples:
        raise DatasetError(f"{path.name}: conversion produced no samples")
    log.info(
        "converted %d samples across %d groups from %s",
        len(samples), len({s.group_id for s in samples}), path.name,
    )
    return samples


@dataclass(frozen=True, slots=True)
class SplitResult:
    train: tuple[LabeledSample, ...]
    test: tuple[LabeledSample, ...]
    manifest: dict


def split(
    samples: Sequence[LabeledSample],
    train_n: int = 30,
    test_groups: int | None = None,
    seed: int = 42,
) -> SplitResult:
    """Draw train samples at the sample level and test groups at the group
    level, disjoint by group.

    Any group that contributed a training sample is barred from the test
    side. Deterministic in (dataset content, seed); input order is
    irrelevant.
    """
    ordered = sorted(samples, key=lambda s: (s.group_id, s.sample_id))
    if train_n < 1 or train_n > len(ordered):
        raise DatasetError(
            f"train_n={train_n} out of range for {len(ordered)} samples"
        )
    rng = random.Random(f"{seed}|corpus-split")
    train = sorted(
        rng.sample(ordered, train_n), key=lambda s: (s.group_id, s.sample_id)
    )
    train_groups = {s.group_id for s in train}
    candidates = sorted({s.group_id for s in ordered} - train_groups)
    if test_groups is None:
        chosen = candidates
    else:
        if test_groups > len(candidates):
            raise DatasetError(
                f"asked for {test_groups} test groups but only "
                f"{len(candidates)} are disjoint from training"
            )
        chosen = sorted(rng.sample(candidates, test_groups))
    test = tuple(s for s in ordered if s.group_id in set(chosen))
    overlap = sorted(train_groups & set(chosen))
    if overlap:  # unreachable by construction, still recorded
        raise DatasetError(f"train/test groups overlap: {overlap}")
    manifest = {
        "seed": seed,
        "train_n": train_n,
        "test_groups_requested": test_groups,
        "train_sample_ids": [s.sample_id for s in train],
        "train_group_ids": sorted(train_groups),
        "test_group_ids": list(chosen),
        "n_test_samples": len(test),
        "group_overlap": overlap,
    }
    return SplitResult(train=tuple(train), test=test, manifest=manifest)
