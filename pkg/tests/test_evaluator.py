import json

import pytest

from hypoeval.evaluator import (
    RubricScorer,
    ScoreUnparseableError,
    SelectionError,
    evaluate,
    load_scores,
    rank_by_correlation,
    save_scores,
    select_hypotheses,
)
from hypoeval.gateway import (
    AuthError,
    CompletionRequest,
    Gateway,
    ScriptMissError,
    ScriptRule,
    ScriptedProvider,
    request_fingerprint,
)
from hypoeval.prompts import PromptLibrary
from hypoeval.types import HypothesisBank, HypoGenConfig, LabeledSample

from conftest import make_hypothesis, judge_gateway
from synth_world import (
    DATA_RUBRICS,
    HID_BY_RID,
    JUDGE_SEED,
    e2e_train_rows,
    judge_score_oracle,
    rubric_text,
)

MARKED_RUBRIC = rubric_text("r1", 0.0)


def _sample(sid="s1", gid="g1", q=3.0, score=None):
    return LabeledSample(
        group_id=gid,
        sample_id=sid,
        input_text=f"Passage for {sid}.",
        output_text=f"A summary [[sid={sid}]][[q={q}]] of the passage.",
        human_score=score,
    )


def _rows_to_samples(rows):
    return [
        LabeledSample(
            group_id=r["group_id"],
            sample_id=r["sample_id"],
            input_text=r["input"],
            output_text=r["output"],
            human_score=r["score"],
        )
        for r in rows
    ]


def _scorer(gateway, aspect, prompts=None, **kw):
    return RubricScorer(
        gateway, prompts or PromptLibrary(), aspect, model="scripted", **kw
    )


def _eval_fingerprint(prompts, aspect, sample, rubric, seed_hint=None):
    """The fingerprint score_one's request will have, built independently."""
    system, user = prompts.render(
        "hyp_eval",
        aspect,
        {
            "input_text": sample.input_text,
            "output_text": sample.output_text,
            "hypothesis": rubric,
        },
    )
    req = CompletionRequest(
        model="scripted",
        system_prompt=system,
        user_prompt=user,
        temperature=0.0,
        max_tokens=1024,
        seed_hint=seed_hint,
    )
    return request_fingerprint("scripted", req)


def test_score_one_judges_deterministically(aspect):
    gw = judge_gateway()
    scorer = _scorer(gw, aspect)
    sample = _sample(q=3.0)
    score, fp = scorer.score_one(
        sample.input_text, sample.output_text, rubric_text("d1", 0.05)
    )
    assert score == judge_score_oracle(JUDGE_SEED, "d1", "s1", 3.0, 0.05)
    assert fp == gw.request_log[0]
    assert gw.stats.requests == 1


def test_score_one_retries_with_bumped_seed(aspect):
    prompts = PromptLibrary()
    sample = _sample()
    fp_first = _eval_fingerprint(prompts, aspect, sample, MARKED_RUBRIC)
    gw = judge_gateway(extra_rules=[
        ScriptRule(fingerprint=fp_first, reply="no score in this reply"),
    ])
    scorer = _scorer(gw, aspect, prompts=prompts)
    score, fp = scorer.score_one(
        sample.input_text, sample.output_text, MARKED_RUBRIC
    )
    # second attempt reaches the judge under a different fingerprint
    assert score == judge_score_oracle(JUDGE_SEED, "r1", "s1", 3.0, 0.0)
    assert gw.request_log == [
        fp_first,
        _eval_fingerprint(prompts, aspect, sample, MARKED_RUBRIC, seed_hint=1),
    ]
    assert fp == gw.request_log[1] != fp_first


def test_score_one_unparseable_after_retry(aspect):
    gw = Gateway(provider=ScriptedProvider([
        ScriptRule(reply="still chatting, no verdict"),
    ]))
    scorer = _scorer(gw, aspect)
    with pytest.raises(ScoreUnparseableError) as excinfo:
        scorer.score_one("in", "out", MARKED_RUBRIC)
    assert gw.stats.requests == 2
    assert excinfo.value.raw_text == "still chatting, no verdict"
    assert excinfo.value.fingerprint == gw.request_log[1]


def test_score_one_out_of_range_also_retries(aspect):
    gw = Gateway(provider=ScriptedProvider([
        ScriptRule(reply="{Final score: 9.00}"),
    ]))
    scorer = _scorer(gw, aspect)
    with pytest.raises(ScoreUnparseableError, match="outside"):
        scorer.score_one("in", "out", MARKED_RUBRIC)
    assert gw.stats.requests == 2


def test_score_jobs_preserves_order(aspect):
    gw = judge_gateway()
    scorer = _scorer(gw, aspect, max_inflight=4)
    samples = [_sample(sid=f"s{i}", q=1.0 + (i % 5)) for i in range(12)]
    jobs = [
        (s.input_text, s.output_text, rubric_text("d2", 0.1)) for s in samples
    ]
    outcomes = scorer.score_jobs(jobs)
    assert [o.score for o in outcomes] == [
        judge_score_oracle(JUDGE_SEED, "d2", s.sample_id, 1.0 + (i % 5), 0.1)
        for i, s in enumerate(samples)
    ]


def test_score_jobs_marks_unparseable_in_place(aspect):
    gw = judge_gateway(extra_rules=[
        ScriptRule(substring="sid=bad", reply="mumbling"),
    ])
    scorer = _scorer(gw, aspect, max_inflight=2)
    jobs = [
        ("in", "ok [[sid=s0]][[q=3.0]] t", rubric_text("r", 0.0)),
        ("in", "bad [[sid=bad]][[q=3.0]] t", rubric_text("r", 0.0)),
        ("in", "ok [[sid=s2]][[q=4.0]] t", rubric_text("r", 0.0)),
    ]
    outcomes = scorer.score_jobs(jobs)
    assert outcomes[0].score is not None and outcomes[2].score is not None
    assert outcomes[1].score is None
    assert "unparseable" in outcomes[1].error
    assert outcomes[1].fingerprint  # points at the failing exchange


def test_score_jobs_gateway_error_capture(aspect):
    # provider with no catch-all: unmatched requests raise ScriptMissError
    gw = Gateway(provider=ScriptedProvider([
        ScriptRule(substring="sid=s0", reply="{Final score: 2.00}"),
    ]))
    scorer = _scorer(gw, aspect, max_inflight=1)
    jobs = [
        ("in", "x [[sid=s0]] y", "rubric"),
        ("in", "x [[sid=s1]] y", "rubric"),
    ]
    with pytest.raises(ScriptMissError):
        scorer.score_jobs(jobs)
    outcomes = scorer.score_jobs(jobs, capture_gateway_errors=True)
    assert outcomes[0].score == 2.0
    assert outcomes[1].score is None
    assert outcomes[1].fingerprint == ""
    assert "no scripted rule" in outcomes[1].error


def test_score_jobs_auth_errors_always_propagate(aspect):
    def deny(req):
        raise AuthError("credentials rejected")

    gw = Gateway(provider=ScriptedProvider([ScriptRule(reply_fn=deny)]))
    scorer = _scorer(gw, aspect, max_inflight=2)
    with pytest.raises(AuthError):
        scorer.score_jobs([("a", "b", "c")] * 3, capture_gateway_errors=True)


def test_score_jobs_empty_and_validation(aspect):
    gw = judge_gateway()
    assert _scorer(gw, aspect).score_jobs([]) == []
    with pytest.raises(ValueError):
        _scorer(gw, aspect, max_inflight=0)


def test_rank_by_correlation_orders_and_breaks_ties():
    humans = [1.0, 2.0, 3.0, 4.0]
    predictions = {
        "neg": [4.0, 3.0, 2.0, 1.0],
        "pos": [1.1, 2.0, 3.2, 3.9],
        "flat": [2.0, 2.0, 2.0, 2.0],
    }
    assert rank_by_correlation(predictions, humans, 3) == ["pos", "flat", "neg"]
    # exact ties: reward descending, then id ascending
    tied = {"a": [1, 2, 3, 4], "b": [1, 2, 3, 4], "c": [1, 2, 3, 4]}
    order = rank_by_correlation(
        tied, humans, 3, tie_break_rewards={"a": 1.0, "b": 2.0, "c": 2.0}
    )
    assert order == ["b", "c", "a"]
    assert rank_by_correlation(tied, humans, 2, {"a": 1.0, "b": 2.0, "c": 2.0}) \
        == ["b", "c"]
    with pytest.raises(ValueError):
        rank_by_correlation(tied, humans, 0)


def _bank_of(aspect, rubrics, cfg=None):
    hyps = tuple(
        make_hypothesis(hid=HID_BY_RID[rid], text=rubric_text(rid, noise))
        for rid, noise in rubrics
    )
    return HypothesisBank(
        aspect=aspect,
        hyperparams=cfg or HypoGenConfig(),
        generator_model="scripted",
        hypotheses=hyps,
        step=30,
        phase="merged",
    )


def test_select_hypotheses_picks_lowest_noise_rubrics(aspect):
    bank = _bank_of(aspect, DATA_RUBRICS)
    samples = _rows_to_samples(e2e_train_rows())
    scorer = _scorer(judge_gateway(), aspect)
    selected = select_hypotheses(bank, samples, scorer)
    assert selected.phase == "selected"
    # rank order must match the frozen per-rubric correlations
    with open("tests/data/golden_e2e.json", encoding="utf-8") as fh:
        golden = json.load(fh)
    d_rids = [rid for rid, _ in DATA_RUBRICS]
    expect = sorted(d_rids, key=lambda r: -golden["train_corr"][r])[:5]
    assert list(selected.selected_ids) == [HID_BY_RID[r] for r in expect]
    # the original bank object is untouched
    assert bank.selected_ids == ()


def test_select_hypotheses_clamps_h_eval(aspect, caplog):
    bank = _bank_of(aspect, DATA_RUBRICS[:3])
    samples = _rows_to_samples(e2e_train_rows())[:10]
    scorer = _scorer(judge_gateway(), aspect)
    with caplog.at_level("WARNING"):
        selected = select_hypotheses(bank, samples, scorer)
    assert len(selected.selected_ids) == 3
    assert any("fewer than h_eval" in r.message for r in caplog.records)


def test_select_hypotheses_error_cases(aspect):
    scorer = _scorer(judge_gateway(), aspect)
    empty = HypothesisBank(
        aspect=aspect, hyperparams=HypoGenConfig(), generator_model="scripted"
    )
    samples = _rows_to_samples(e2e_train_rows())[:6]
    with pytest.raises(SelectionError, match="no hypotheses"):
        select_hypotheses(empty, samples, scorer)
    bank = _bank_of(aspect, DATA_RUBRICS[:5])
    unscored = samples[:5] + [_sample(sid="nolabel", score=None)]
    with pytest.raises(SelectionError, match="human scores"):
        select_hypotheses(bank, unscored, scorer)
    with pytest.raises(SelectionError, match="two samples"):
        select_hypotheses(bank, samples[:1], scorer)


def test_select_hypotheses_aborts_on_unscorable_rubric(aspect):
    # one rubric whose judging always yields an unparseable reply
    hyps = tuple(
        make_hypothesis(hid=HID_BY_RID[rid], text=rubric_text(rid, noise))
        for rid, noise in DATA_RUBRICS[:4]
    ) + (make_hypothesis(hid="h099", text=rubric_text("mute", 0.0)),)
    bank = HypothesisBank(
        aspect=aspect,
        hyperparams=HypoGenConfig(),
        generator_model="scripted",
        hypotheses=hyps,
        step=30,
        phase="merged",
    )
    gw = judge_gateway(extra_rules=[
        ScriptRule(substring="rid=mute", reply="thinking out loud, no score"),
    ])
    samples = _rows_to_samples(e2e_train_rows())[:8]
    with pytest.raises(SelectionError, match="h099"):
        select_hypotheses(bank, samples, _scorer(gw, aspect))


def _selected_bank(aspect, rubrics, order):
    bank = _bank_of(aspect, rubrics)
    return HypothesisBank(
        aspect=bank.aspect,
        hyperparams=bank.hyperparams,
        generator_model=bank.generator_model,
        hypotheses=bank.hypotheses,
        step=bank.step,
        selected_ids=tuple(HID_BY_RID[r] for r in order),
        phase="selected",
    )


def test_evaluate_requests_are_sample_major(aspect):
    prompts = PromptLibrary()
    picked = [("d1", 0.05), ("d2", 0.10), ("d3", 0.15)]
    bank = _selected_bank(aspect, DATA_RUBRICS, [r for r, _ in picked])
    samples = [_sample(sid=f"s{i}", q=2.0 + i, score=2.0 + i) for i in range(4)]
    gw = judge_gateway()
    records = evaluate(samples, bank, _scorer(gw, aspect, max_inflight=1))
    expected_log = [
        _eval_fingerprint(prompts, aspect, s, rubric_text(rid, noise))
        for s in samples
        for rid, noise in picked
    ]
    assert gw.request_log == expected_log
    assert gw.stats.requests == len(samples) * len(picked) == 12
    for s, rec in zip(samples, records):
        assert rec.sample_id == s.sample_id and rec.group_id == s.group_id
        per = {
            rid: judge_score_oracle(JUDGE_SEED, rid, s.sample_id,
                                    s.human_score, noise)
            for rid, noise in picked
        }
        for rid, _ in picked:
            assert rec.per_hypothesis[HID_BY_RID[rid]].score == per[rid]
        assert rec.final_score == pytest.approx(
            sum(per.values()) / len(per), abs=1e-12
        )


def test_evaluate_unlabeled_samples_are_fine(aspect):
    bank = _selected_bank(aspect, DATA_RUBRICS[:2], ["d1", "d2"])
    samples = [_sample(sid=f"u{i}", q=3.0, score=None) for i in range(3)]
    records = evaluate(samples, bank, _scorer(judge_gateway(), aspect))
    assert all(r.final_score is not None for r in records)


def test_evaluate_null_final_on_unparseable(aspect):
    bank = _selected_bank(aspect, DATA_RUBRICS[:3], ["d1", "d2", "d3"])
    gw = judge_gateway(extra_rules=[
        ScriptRule(substring="rid=d2]][[noise", reply="no verdict today"),
    ])
    samples = [_sample(sid="s1", q=3.0)]
    records = evaluate(samples, bank, _scorer(gw, aspect))
    rec = records[0]
    assert rec.final_score is None
    assert rec.per_hypothesis[HID_BY_RID["d2"]].score is None
    assert rec.per_hypothesis[HID_BY_RID["d2"]].error
    assert rec.per_hypothesis[HID_BY_RID["d1"]].score is not None
    assert rec.per_hypothesis[HID_BY_RID["d3"]].score is not None


def test_evaluate_requires_selection(aspect):
    bank = _bank_of(aspect, DATA_RUBRICS[:2])
    with pytest.raises(ValueError, match="selection"):
        evaluate([_sample()], bank, _scorer(judge_gateway(), aspect))


def test_scores_round_trip(tmp_path, aspect):
    bank = _selected_bank(aspect, DATA_RUBRICS[:2], ["d1", "d2"])
    samples = [_sample(sid=f"s{i}", gid=f"g{i % 2}", q=2.5) for i in range(4)]
    records = evaluate(samples, bank, _scorer(judge_gateway(), aspect))
    path = tmp_path / "scores.jsonl"
    save_scores(path, records)
    rows = load_scores(path)
    assert [r["sample_id"] for r in rows] == [s.sample_id for s in samples]
    assert rows[0]["final_score"] == records[0].final_score
    assert set(rows[0]["per_hypothesis"]) == {"h001", "h002"}
    # a corrupt line is reported with its position
    path.write_text('{"ok": 1}\nnot json\n', encoding="utf-8")
    with pytest.raises(ValueError, match=":2"):
        load_scores(path)
