"""Regenerate tests/data/golden_e2e.json.

Computes the expected outcome of the scripted end-to-end run without the
package under test: judge scores come from the independent arithmetic in
synth_world, correlations from scipy. Run from the repository root:

    python3 tests/oracles/gen_golden_e2e.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

from scipy import stats as sps

sys.path.insert(0, str(Path(__file__).parent.parent))

from synth_world import (  # noqa: E402
    DATA_RUBRICS,
    E2E_CONFIG,
    HID_BY_RID,
    JUDGE_SEED,
    LIT_RUBRICS,
    e2e_test_rows,
    e2e_train_rows,
    judge_score_oracle,
)

OUT = Path(__file__).parent.parent / "data" / "golden_e2e.json"


def main() -> None:
    rubrics = dict(DATA_RUBRICS + LIT_RUBRICS)
    train = e2e_train_rows()
    test = e2e_test_rows()

    # per-rubric Pearson with the human scores over the 30 training samples
    humans = [row["score"] for row in train]
    train_corr: dict[str, float] = {}
    for rid, noise in rubrics.items():
        preds = [
            judge_score_oracle(JUDGE_SEED, rid, row["sample_id"], row["score"], noise)
            for row in train
        ]
        train_corr[rid] = float(sps.pearsonr(preds, humans).statistic)

    corrs = sorted(train_corr.values(), reverse=True)
    assert len(set(corrs)) == len(corrs), "tie in training correlations"
    ranked = sorted(train_corr, key=lambda rid: -train_corr[rid])
    h_eval = E2E_CONFIG["h_eval"]
    selected_rids = ranked[:h_eval]
    # the design promise: the five lowest-noise rubrics win
    assert sorted(rubrics[rid] for rid in selected_rids) == sorted(
        sorted(rubrics.values())[:h_eval]
    ), f"selection design broken: {selected_rids}"

    final_scores: dict[str, float] = {}
    for row in test:
        per_rubric = [
            judge_score_oracle(
                JUDGE_SEED, rid, row["sample_id"], row["score"], rubrics[rid]
            )
            for rid in selected_rids
        ]
        final_scores[row["sample_id"]] = sum(per_rubric) / len(per_rubric)

    by_group: dict[str, list[dict]] = {}
    for row in test:
        by_group.setdefault(row["group_id"], []).append(row)
    per_group: dict[str, dict[str, float]] = {}
    for gid in sorted(by_group):
        rows = by_group[gid]
        preds = [final_scores[r["sample_id"]] for r in rows]
        hums = [r["score"] for r in rows]
        per_group[gid] = {
            "spearman": float(sps.spearmanr(preds, hums).statistic),
            "pearson": float(sps.pearsonr(preds, hums).statistic),
        }
    agg = {
        "spearman": sum(g["spearman"] for g in per_group.values()) / len(per_group),
        "pearson": sum(g["pearson"] for g in per_group.values()) / len(per_group),
    }

    golden = {
        "judge_seed": JUDGE_SEED,
        "noise_by_rid": rubrics,
        "train_corr": train_corr,
        "selected_rids": selected_rids,
        "selected_hids": [HID_BY_RID[rid] for rid in selected_rids],
        "final_scores": final_scores,
        "per_group": per_group,
        "aggregate": agg,
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(golden, indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    print(f"selected: {selected_rids} -> {golden['selected_hids']}")
    print(f"aggregate: spearman={agg['spearman']:.6f} pearson={agg['pearson']:.6f}")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
