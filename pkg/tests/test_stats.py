import random

import numpy as np
import pytest
from scipy import stats as sps

from hypoeval.stats import (
    MetaRecord,
    average_ranks,
    grouped_correlation,
    pearson,
    spearman,
)


def test_spearman_closed_form_example_is_exact():
    assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == 0.8


def test_pearson_reference_value():
    got = pearson([1, 2, 3, 4], [1, 3, 2, 5])
    assert got == pytest.approx(0.8315218406202999, abs=1e-12)


def test_average_ranks_handles_ties():
    assert list(average_ranks([10.0, 20.0, 20.0, 30.0])) == [1.0, 2.5, 2.5, 4.0]
    assert list(average_ranks([5.0, 5.0, 5.0])) == [2.0, 2.0, 2.0]
    assert list(average_ranks([3.0, 1.0, 2.0])) == [3.0, 1.0, 2.0]


def _random_pair(rng: random.Random) -> tuple[list[float], list[float]]:
    n = rng.randint(2, 50)
    xs = [rng.uniform(1, 5) for _ in range(n)]
    ys = [rng.uniform(1, 5) for _ in range(n)]
    # inject ties so the average-rank path is exercised
    if n >= 4 and rng.random() < 0.6:
        for _ in range(rng.randint(1, n // 2)):
            i, j = rng.randrange(n), rng.randrange(n)
            xs[i] = xs[j]
        ys[rng.randrange(n)] = ys[rng.randrange(n)]
    if len(set(xs)) == 1 or len(set(ys)) == 1:  # degenerate convention differs
        xs[0] += 0.5
        ys[-1] += 0.5
    return xs, ys


def test_matches_reference_implementation_on_random_vectors():
    rng = random.Random(1234)
    for _ in range(300):
        xs, ys = _random_pair(rng)
        assert pearson(xs, ys) == pytest.approx(
            sps.pearsonr(xs, ys).statistic, abs=1e-9
        )
        assert spearman(xs, ys) == pytest.approx(
            sps.spearmanr(xs, ys).statistic, abs=1e-9
        )


def test_input_validation():
    with pytest.raises(ValueError):
        pearson([1.0], [1.0])
    with pytest.raises(ValueError):
        pearson([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        spearman([1.0, float("nan")], [1.0, 2.0])
    with pytest.raises(ValueError):
        pearson([1.0, float("inf")], [1.0, 2.0])


def test_degenerate_conventions():
    # all-equal reference: perfect agreement by convention
    assert pearson([1.0, 2.0, 3.0], [4.0, 4.0, 4.0]) == 1.0
    assert spearman([1.0, 2.0, 3.0], [4.0, 4.0, 4.0]) == 1.0
    # constant predictions against varying reference: zero, with a warning
    assert pearson([2.0, 2.0, 2.0], [1.0, 2.0, 3.0]) == 0.0
    assert spearman([2.0, 2.0, 2.0], [1.0, 2.0, 3.0]) == 0.0
    # both constant: the reference rule wins
    assert pearson([2.0, 2.0], [4.0, 4.0]) == 1.0


def test_affine_invariance():
    rng = random.Random(7)
    xs = [rng.uniform(0, 10) for _ in range(20)]
    ys = [rng.uniform(0, 10) for _ in range(20)]
    base_p = pearson(xs, ys)
    base_s = spearman(xs, ys)
    scaled = [3.0 * x + 2.0 for x in xs]
    assert pearson(scaled, ys) == pytest.approx(base_p, abs=1e-12)
    # spearman only cares about order, so any monotone map preserves it
    assert spearman([np.exp(x / 5) for x in xs], ys) == pytest.approx(
        base_s, abs=1e-12
    )


def _rec(gid, pred, human):
    return MetaRecord(group_id=gid, predicted=pred, human=human)


def test_grouped_mode_per_group_and_aggregate():
    records = [
        _rec("a", 1.0, 1.0), _rec("a", 2.0, 2.0), _rec("a", 3.0, 3.0),
        _rec("b", 3.0, 1.0), _rec("b", 2.0, 2.0), _rec("b", 1.0, 3.0),
    ]
    report = grouped_correlation(records)
    assert report.mode == "grouped"
    assert report.per_group["a"].spearman == pytest.approx(1.0)
    assert report.per_group["b"].spearman == pytest.approx(-1.0)
    assert report.aggregate_spearman == pytest.approx(0.0)
    assert report.n_records == 6


def test_grouped_mode_skips_singletons_and_counts_unscored():
    records = [
        _rec("a", 1.0, 1.0), _rec("a", 2.0, 2.0),
        _rec("b", 2.0, 4.0),
        _rec("c", None, 3.0), _rec("c", None, 1.0),
    ]
    report = grouped_correlation(records)
    assert [s.group_id for s in report.skipped_groups] == ["b"]
    assert report.skipped_groups[0].reason == "singleton"
    assert report.excluded_records == 2
    assert set(report.per_group) == {"a"}


def test_all_equal_human_group_contributes_one():
    records = [
        _rec("flat", 1.0, 3.0), _rec("flat", 4.0, 3.0), _rec("flat", 2.0, 3.0),
        _rec("real", 1.0, 1.0), _rec("real", 2.0, 2.0),
    ]
    report = grouped_correlation(records)
    flat = report.per_group["flat"]
    assert flat.all_equal and flat.spearman == 1.0 and flat.pearson == 1.0
    assert report.aggregate_spearman == pytest.approx(1.0)


def test_weighted_aggregate():
    records = [
        _rec("big", 1.0, 1.0), _rec("big", 2.0, 2.0), _rec("big", 3.0, 3.0),
        _rec("big", 4.0, 4.0),
        _rec("small", 2.0, 1.0), _rec("small", 1.0, 2.0),
    ]
    plain = grouped_correlation(records)
    weighted = grouped_correlation(records, weighted=True)
    assert plain.aggregate_spearman == pytest.approx((1.0 - 1.0) / 2)
    assert weighted.aggregate_spearman == pytest.approx((4 * 1.0 - 2 * 1.0) / 6)


def test_dataset_mode_flattens():
    records = [
        _rec("a", 1.0, 1.0), _rec("a", 2.0, 2.0),
        _rec("b", 3.0, 3.0), _rec("b", 4.0, 4.0),
    ]
    report = grouped_correlation(records, mode="dataset")
    assert report.aggregate_spearman == pytest.approx(1.0)
    assert report.per_group == {}


def test_grouped_errors():
    with pytest.raises(ValueError):
        grouped_correlation([_rec("a", 1.0, 1.0)])
    with pytest.raises(ValueError):
        grouped_correlation(
            [_rec("a", 1.0, 1.0), _rec("b", 2.0, 2.0)]
        )  # two groups, both singletons
    with pytest.raises(ValueError):
        grouped_correlation([_rec("a", 1.0, 1.0)], mode="bogus")
