from __future__ import annotations

import pytest

from hypoeval.gateway import (
    REPLY_GENERATORS,
    Gateway,
    ScriptRule,
    ScriptedProvider,
)
from hypoeval.types import AspectSpec, HypoGenConfig, Hypothesis

from synth_world import JUDGE_SEED


@pytest.fixture
def aspect() -> AspectSpec:
    return AspectSpec(
        task_id="summarization",
        aspect_id="coherence",
        definition="the collective quality of all sentences",
    )


@pytest.fixture
def story_aspect() -> AspectSpec:
    return AspectSpec(
        task_id="story_generation",
        aspect_id="engagement",
        definition="how much the reader wants to keep reading",
    )


@pytest.fixture
def cfg() -> HypoGenConfig:
    return HypoGenConfig()


def make_hypothesis(
    hid: str = "h001",
    reward: float = 1.0,
    n_seen: int = 0,
    sum_sq_err: float = 0.0,
    created_at_step: int = 0,
    origin: str = "initial",
    text: str | None = None,
    seen: tuple[str, ...] | None = None,
    last_update_step: int | None = None,
) -> Hypothesis:
    if seen is None:
        seen = tuple(f"{hid}-seen{i}" for i in range(n_seen))
    return Hypothesis(
        id=hid,
        text=text or f"Rubric {hid}: judge one trait from one to five.",
        origin=origin,
        created_at_step=created_at_step,
        n_seen=n_seen,
        sum_sq_err=sum_sq_err,
        reward=reward,
        seen_sample_ids=seen,
        last_update_step=(
            created_at_step if last_update_step is None else last_update_step
        ),
    )


def judge_gateway(seed: int = JUDGE_SEED, extra_rules: list[ScriptRule] | None = None) -> Gateway:
    """Gateway whose provider judges via markers and denies repetition."""
    rules = list(extra_rules or [])
    rules += [
        ScriptRule(substring="repetitive", reply="Final answer: [no]"),
        ScriptRule(
            substring="{Final score:",
            reply_fn=REPLY_GENERATORS["synthetic-judge"]({"seed": seed}),
        ),
    ]
    return Gateway(provider=ScriptedProvider(rules))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One ACCEPTANCE verdict line per criterion, after capture teardown."""
    del exitstatus, config
    stats = terminalreporter.stats
    if not any(
        "test_acceptance" in getattr(rep, "nodeid", "")
        for reports in stats.values()
        for rep in reports
    ):
        return
    import test_acceptance

    verdicts: dict[int, str] = {}
    for key, verdict in (
        ("passed", "PASS"),
        ("failed", "FAIL"),
        ("error", "FAIL"),
        ("skipped", "SKIP"),
    ):
        for rep in stats.get(key, ()):
            name = getattr(rep, "nodeid", "").split("::")[-1]
            entry = test_acceptance.CRITERIA.get(name)
            if entry is not None:
                number, label = entry
                verdicts[number] = f"ACCEPTANCE {number} {label}: {verdict}"
    if verdicts:
        terminalreporter.write_line("")
        for number in sorted(verdicts):
            terminalreporter.write_line(verdicts[number])
