"""Prompt templates, rendering, and reply parsing.

Templates are embedded string pairs (system, user) with two bits of grammar:

* ``<name>`` substitutes a variable; rendering raises MissingPlaceholderError
  if no value was supplied. Substitution is single-pass, so substituted
  content is never re-scanned.
* ``<<if name>> ... <</if>>`` keeps the enclosed lines only when the named
  variable is non-empty. The variable must still be supplied.

A directory of ``{template_id}.system.txt`` / ``{template_id}.user.txt``
files can override any embedded template with the same grammar.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .types import AspectSpec, LabeledSample

log = logging.getLogger(__name__)


class ParseError(ValueError):
    """Model reply did not contain the expected marker."""


class OutOfRangeScoreError(ParseError):
    """Parsed a score, but it falls outside the aspect's scale."""

    def __init__(self, score: float, score_min: float, score_max: float):
        self.score = score
        super().__init__(
            f"score {score:g} outside [{score_min:g}, {score_max:g}]"
        )


class MissingPlaceholderError(ValueError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"no value supplied for placeholder <{name}>")


_FORMAT_REMINDER = (
    'Remember! when generating hypotheses, always put "hypothesis1.", '
    '"hypothesis2.", etc. as your index, do not just generate "1.", "2.", etc.'
)
_FORMAT_REMINDER_REFINED = (
    'Remember! when generating the refined hypotheses, always put '
    '"hypothesis1.", "hypothesis2.", etc. as your index, do not just '
    'generate "1.", "2.", etc.'
)

_GENERATE_SYSTEM = """You are a helpful assistant for predicting what score on <aspect>, between <score_min> to <score_max> (the higher the better), will <unit_phrase> receive when judged by human experts.
Given <pair_phrase>, we want to generate hypotheses that are useful for predicting what score on <aspect>, between <score_min> to <score_max> (the higher the better), will <unit_phrase> receive when judged by human experts.
The definition of <aspect> is given by: <definition>

Using the given examples and relevant literatures, please propose <num_hypotheses> possible hypotheses.
These hypotheses should identify specific patterns that occur across the provided <output_plural>.

Each hypothesis should be about a specific trait or dimension that human experts considers when giving score on <aspect>.
Each hypothesis should clearly state that based on the trait or dimension, what kind of <output_noun> would be given a score of one, what kind of <output_noun> would be given a score of two, what kind of <output_noun> would be given a score of three, what kind of <output_noun> would be given a score of four, and what kind of <output_noun> would be given a score of five.

Generate them in the format of hypothesis1. [hypothesis], hypothesis2. [hypothesis], ... hypothesis<num_hypotheses>. [hypothesis].
The hypotheses should analyze what are the traits of the <output_plural> human experts considers when giving a score of one, two, three, four, or five.
""" + _FORMAT_REMINDER

_GENERATE_USER = """<<if relevant_papers>>
We have some key findings from a series of research papers that might be useful for generating hypotheses:
<relevant_papers>
<</if>>
<<if observations>>
We have seen some <output_plural> and their <input_plural>, together with their scores on <aspect> given by human experts:
<observations>
<</if>>
Please generate hypotheses that are useful for predicting what score on <aspect>, between <score_min> to <score_max> (the higher the better), will <unit_phrase> receive when judged by human experts.
The definition of <aspect> is given by: <definition>
Propose <num_hypotheses> possible hypotheses. Generate them in the format of hypothesis1. [hypothesis], hypothesis2. [hypothesis], ... hypothesis<num_hypotheses>. [hypothesis].
""" + _FORMAT_REMINDER + "\nProposed hypotheses:"

_REFINE_SYSTEM_STEM = """You are a helpful assistant for predicting what score on <aspect>, between <score_min> to <score_max> (the higher the better), will <unit_phrase> receive when judged by human experts.
Given <pair_phrase>, we want to refine hypotheses that are useful for predicting what score on <aspect>, between <score_min> to <score_max> (the higher the better), will <unit_phrase> receive when judged by human experts.
The definition of <aspect> is given by: <definition>

{refine_source_line}
The refined hypotheses should identify specific patterns that occur across the provided <output_plural>.

Each hypothesis should be about a specific trait or dimension that human experts considers when giving score on <aspect>.
Each hypothesis should clearly state that based on the trait or dimension, what kind of <output_noun> would be given a score of one, what kind of <output_noun> would be given a score of two, what kind of <output_noun> would be given a score of three, what kind of <output_noun> would be given a score of four, and what kind of <output_noun> would be given a score of five.

Generate the refined hypotheses in the format of hypothesis1. [hypothesis], hypothesis2. [hypothesis], ... hypothesis<num_hypotheses>. [hypothesis].
The refined hypotheses should analyze what are the traits of the <output_plural> human experts considers when giving a score of one, two, three, four, or five.
""" + _FORMAT_REMINDER_REFINED

_REFINE_DATA_USER = """We have seen some <output_plural> and their <input_plural>, together with their scores on <aspect> given by human experts:
<observations>
We have some hypotheses that need to be refined:
<hypotheses>
Please refine the provided hypotheses to make them more useful for predicting what score on <aspect>, between <score_min> to <score_max> (the higher the better), will <unit_phrase> receive when judged by human experts.
When refining the hypotheses, feel free to change the key information or topic of a hypothesis based on the prevailing patterns in data if you think it is necessary.
The definition of <aspect> is given by: <definition>
Generate the refined hypotheses in the format of hypothesis1. [hypothesis], hypothesis2. [hypothesis], ... hypothesis<num_hypotheses>. [hypothesis].
""" + _FORMAT_REMINDER_REFINED + "\nRefined hypotheses:"

_REFINE_LIT_USER = """We have some key findings from a series of research papers that might be useful for refining hypotheses:
<relevant_papers>
We have some hypotheses that need to be refined:
<hypotheses>
Please refine the provided hypotheses using the key findings from the research papers to make them more useful for predicting what score on <aspect>, between <score_min> to <score_max> (the higher the better), will <unit_phrase> receive when judged by human experts.
The definition of <aspect> is given by: <definition>
Generate the refined hypotheses in the format of hypothesis1. [hypothesis], hypothesis2. [hypothesis], ... hypothesis<num_hypotheses>. [hypothesis].
""" + _FORMAT_REMINDER_REFINED + "\nRefined hypotheses:"

_CHECK_REPETITION_SYSTEM = """You are a helpful assistant for predicting what score on <aspect>, between <score_min> to <score_max> (the higher the better), will <unit_phrase> receive when judged by human experts.
From past experiences, you learned two hypotheses that are useful for predicting what score on <aspect>, between <score_min> to <score_max> (the higher the better), will <unit_phrase> receive when judged by human experts.
You need to determine if the two hypotheses are so similar to the level of "repeating hypotheses".
Finally, answer "yes" if the two hypotheses are repetitive and "no" if they are not.
Keep your answer short.
Give your final answer in the format of "Final answer: [answer]"."""

_CHECK_REPETITION_USER = """We have two hypotheses that need you to determine if they are repetitive:
<hypotheses>
Are these two hypotheses so similar to the level that they are repetitive? If the both of them can provide significantly more information than only one of them could, and the information is important and useful for predicting what score on <aspect>, between <score_min> to <score_max> (the higher the better), will <unit_phrase> receive when judged by human experts, they should not be considered repetitive.
Note that adding specific examples does not count as "provide significantly more information".
Give a short explanation of your decision.
Then give your final answer in the format of "Final answer: [answer]".
Your answer:"""

_HYP_EVAL_SYSTEM = """You are a helpful assistant in answering questions about <eval_intro_phrase>.
You will be given the <eval_given_list>, and a pattern that talks about a specific trait to evaluate the <aspect> of the <output_noun>.
You should be generous and not too strict when evaluating.
The definition of <aspect> is given by: <definition>.
<input_label>: [<input_token>]
<output_label>: [<output_token>]
Pattern: [hypothesis]
The pattern talks about a specific trait that is related to the <output_noun>'s score on <aspect>.
You need to evaluate the <output_noun> based on the trait and the rubric that the pattern talks about.
You should give a score (ranging from <score_min> to <score_max>) on that trait according to the rubric.
Give your final evaluation score in the format of {Final score: [your score]}."""

_HYP_EVAL_USER = """Given <eval_given_short>, and pattern:
<input_label>: <input_text>
<output_label>: <output_text>
Pattern: <hypothesis>
<<if truncation_note>>
<truncation_note>
<</if>>
The pattern talks about a specific trait that is related to the <output_noun>'s score on <aspect>.
The definition of <aspect> is given by: <definition>
You need to evaluate the <output_noun> based on the trait and the rubric that the pattern talks about.
You should give a score (ranging from <score_min> to <score_max>) on that trait according to the rubric.
Follow the steps and provide reasoning when giving your score.
Step 1: What is the trait that the pattern talks about?
Step 2: Based on the trait and the rubric provided in the pattern, how is the <output_noun> on the trait?
Step 3 (final answer): Based on the rubric and your evaluations in step 2, what should be the score of the <output_noun> on the trait?
You should be generous and not too strict when evaluating.
Give your final evaluation score in the format of {Final score: [your score]}.
Answer:"""

_LIT_SUMMARIZE_SYSTEM = """You are a helpful assistant for summarizing key findings from research papers about evaluating <output_plural>.
You will be given the text of one research paper.
Summarize the key findings that could help predict what score on <aspect>, between <score_min> to <score_max> (the higher the better), will <unit_phrase> receive when judged by human experts.
Keep the summary short and focused on findings that can be acted on."""

_LIT_SUMMARIZE_USER = """Paper text:
<paper_text>

The definition of <aspect> is given by: <definition>
Summarize the key findings of this paper that are relevant for evaluating the <aspect> of <output_plural>. Use at most 300 words.
Summary:"""

TEMPLATES: dict[str, tuple[str, str]] = {
    "generate": (_GENERATE_SYSTEM, _GENERATE_USER),
    "refine_with_data": (
        _REFINE_SYSTEM_STEM.format(
            refine_source_line="Using the given examples, refine the hypotheses provided."
        ),
        _REFINE_DATA_USER,
    ),
    "refine_with_literature": (
        _REFINE_SYSTEM_STEM.format(
            refine_source_line=(
                "Using the given key findings from relevant research papers, "
                "refine the hypotheses provided."
            )
        ),
        _REFINE_LIT_USER,
    ),
    "check_repetition": (_CHECK_REPETITION_SYSTEM, _CHECK_REPETITION_USER),
    "hyp_eval": (_HYP_EVAL_SYSTEM, _HYP_EVAL_USER),
    "lit_summarize": (_LIT_SUMMARIZE_SYSTEM, _LIT_SUMMARIZE_USER),
}

_SECTION_RE = re.compile(r"<<if ([a-z_][a-z0-9_]*)>>\n(.*?)<</if>>\n?", re.DOTALL)
_PLACEHOLDER_RE = re.compile(r"<([a-z_][a-z0-9_]*)>")


def _substitute(template: str, variables: Mapping[str, str]) -> str:
    def keep_section(match: re.Match[str]) -> str:
        name = match.group(1)
        if name not in variables:
            raise MissingPlaceholderError(name)
        return match.group(2) if str(variables[name]) else ""

    def fill(match: re.Match[str]) -> str:
        name = match.group(1)
        if name not in variables:
            raise MissingPlaceholderError(name)
        return str(variables[name])

    text = _SECTION_RE.sub(keep_section, template)
    return _PLACEHOLDER_RE.sub(fill, text)


def _format_number(value: float) -> str:
    return f"{value:g}"


class PromptLibrary:
    """Embedded templates, optionally overridden from a directory."""

    def __init__(self, overrides_dir: str | Path | None = None):
        self._templates = dict(TEMPLATES)
        if overrides_dir is not None:
            self._load_overrides(Path(overrides_dir))

    def _load_overrides(self, root: Path) -> None:
        if not root.is_dir():
            raise FileNotFoundError(f"prompts dir {root} does not exist")
        for template_id in self._templates:
            system, user = self._templates[template_id]
            sys_path = root / f"{template_id}.system.txt"
            user_path = root / f"{template_id}.user.txt"
            if sys_path.exists():
                system = sys_path.read_text(encoding="utf-8")
            if user_path.exists():
                user = user_path.read_text(encoding="utf-8")
            self._templates[template_id] = (system, user)

    def template_ids(self) -> list[str]:
        return sorted(self._templates)

    def render(
        self,
        template_id: str,
        aspect: AspectSpec,
        variables: Mapping[str, str] | None = None,
    ) -> tuple[str, str]:
        """Render (system_prompt, user_prompt) for one template.

        Raises MissingPlaceholderError if the template references a variable
        that was not supplied; no placeholder survives rendering.
        """
        if template_id not in self._templates:
            raise KeyError(f"unknown template {template_id!r}")
        merged: dict[str, str] = {
            "aspect": aspect.aspect_id,
            "definition": aspect.definition,
            "score_min": _format_number(aspect.score_min),
            "score_max": _format_number(aspect.score_max),
        }
        merged.update(aspect.nouns())
        merged.update(variables or {})
        system_tpl, user_tpl = self._templates[template_id]
        return _substitute(system_tpl, merged), _substitute(user_tpl, merged)


@dataclass(frozen=True, slots=True)
class ObservationBlock:
    """Rendered sample listing for generation prompts; order preserved."""

    text: str
    sample_ids: tuple[str, ...]


def render_observations(
    samples: Sequence[LabeledSample],
    aspect: AspectSpec,
    char_budget: int = 6000,
) -> ObservationBlock:
    """List samples as labeled input/output/score triples.

    Inputs longer than char_budget are cut with an explicit marker; outputs
    and scores are never truncated.
    """
    nouns = aspect.nouns()
    parts: list[str] = []
    for s in samples:
        if s.human_score is None:
            raise ValueError(f"sample {s.sample_id} has no human score")
        input_text = s.input_text
        if len(input_text) > char_budget:
            input_text = input_text[:char_budget] + " ...[truncated]"
        parts.append(
            f"{nouns['input_label']}: {input_text}\n"
            f"{nouns['output_label']}: {s.output_text}\n"
            f"Score on {aspect.aspect_id}: {s.human_score:g}"
        )
    return ObservationBlock(
        text="\n\n".join(parts),
        sample_ids=tuple(s.sample_id for s in samples),
    )


def render_hypothesis_listing(texts: Sequence[str]) -> str:
    """Number hypotheses the way the templates ask replies to be numbered."""
    return "\n".join(f"hypothesis{i}. {t}" for i, t in enumerate(texts, start=1))


_HYP_MARKER_RE = re.compile(r"hypothesis\s*(\d+)\s*[.:]", re.IGNORECASE)
_FINAL_SCORE_RE = re.compile(
    r"final\s+score\s*:\s*[\[{]?\s*(-?\d+(?:\.\d+)?)", re.IGNORECASE
)
_FINAL_ANSWER_RE = re.compile(
    r"final\s+answer\s*:\s*\[?\s*(yes|no)\b", re.IGNORECASE
)


def parse_hypothesis_list(text: str, expected_n: int) -> list[str]:
    """Extract numbered hypotheses from a generation reply.

    Zero markers is a ParseError. A count other than expected_n logs a
    warning and returns whatever was found; the caller decides whether to
    re-ask.
    """
    matches = list(_HYP_MARKER_RE.finditer(text))
    if not matches:
        raise ParseError("no 'hypothesis<n>.' markers in reply")
    found: list[str] = []
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        body = text[m.end():end].strip()
        body = body.strip("[]").strip()
        if body:
            found.append(body)
    if not found:
        raise ParseError("hypothesis markers present but all bodies empty")
    if len(found) != expected_n:
        log.warning(
            "expected %d hypotheses, reply contained %d", expected_n, len(found)
        )
    return found


def parse_final_score(text: str, score_min: float, score_max: float) -> float:
    """Read the last 'Final score:' marker; never clamps."""
    matches = _FINAL_SCORE_RE.findall(text)
    if not matches:
        raise ParseError("no 'Final score:' marker in reply")
    score = float(matches[-1])
    if not score_min <= score <= score_max:
        raise OutOfRangeScoreError(score, score_min, score_max)
    return score


def parse_yes_no(text: str) -> bool:
    """Read the last 'Final answer:' marker; yes -> True, no -> False."""
    matches = _FINAL_ANSWER_RE.findall(text)
    if not matches:
        raise ParseError("no 'Final answer:' marker in reply")
    return matches[-1].lower() == "yes"
