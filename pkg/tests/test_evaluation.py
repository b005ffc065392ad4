import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from preasp.data import read_predictions
from preasp.errors import InvalidInputError, UndefinedCorrelationError
from preasp.evaluation import (aggregate, boundary_mae, duration_stats, evaluate, format_report,
                               kfold_split, loso_split, pearson, tolerance_accuracy,
                               train_val_split, write_report_csv)

FIXTURE = Path(__file__).parent / "fixtures" / "metric_fixture_predictions.csv"

pairs_strategy = st.lists(st.tuples(st.integers(0, 300), st.integers(1, 150)), min_size=2, max_size=40)


def as_pairs(raw):
    return np.array([(ts, ts + d) for ts, d in raw], dtype=float)


def fixture_pairs():
    rows = read_predictions(FIXTURE)
    return (np.array([(r.pred_ts_ms, r.pred_te_ms) for r in rows]),
            np.array([(r.gold_ts_ms, r.gold_te_ms) for r in rows]))


# ---------------------------------------------------------------- tolerance

def test_identity_is_perfect():
    g = np.array([[10, 40], [5, 9]])
    assert list(tolerance_accuracy(g, g)) == [100.0] * 4
    assert boundary_mae(g, g) == (0.0, 0.0)


def test_hand_counted_tolerances():
    gold = np.array([[0, 30]] * 4)
    preds = np.array([[0, 33], [0, 37], [0, 42], [0, 55]])     # diffs 3, 7, 12, 25
    assert list(tolerance_accuracy(preds, gold)) == [25.0, 50.0, 75.0, 75.0]


def test_length_mismatch_and_bad_mode():
    with pytest.raises(InvalidInputError):
        tolerance_accuracy([[0, 1]], [[0, 1], [2, 3]])
    with pytest.raises(InvalidInputError):
        tolerance_accuracy([[0, 1]], [[0, 1]], mode="other")
    with pytest.raises(InvalidInputError):
        boundary_mae(np.empty((0, 2)), np.empty((0, 2)))


@settings(max_examples=100, deadline=None)
@given(pairs_strategy, st.integers(0, 2 ** 32 - 1))
def test_tolerance_monotone_and_permutation_invariant(raw, seed):
    gold = as_pairs(raw)
    rng = np.random.default_rng(seed)
    preds = gold + rng.integers(-30, 30, gold.shape)
    th = np.sort(rng.uniform(0, 40, 6))
    for mode in ("duration", "boundary"):
        acc = tolerance_accuracy(preds, gold, th, mode)
        assert np.all(np.diff(acc) >= 0) and np.all((acc >= 0) & (acc <= 100))
    perm = rng.permutation(len(gold))
    assert np.array_equal(tolerance_accuracy(preds, gold), tolerance_accuracy(preds[perm], gold[perm]))
    np.testing.assert_allclose(boundary_mae(preds, gold), boundary_mae(preds[perm], gold[perm]), atol=1e-12)


def test_boundary_mae_hand_values():
    gold = np.array([[10, 40], [20, 60]])
    preds = np.array([[12, 40], [16, 66]])
    assert boundary_mae(preds, gold) == (3.0, 3.0)


# ---------------------------------------------------------------- stats

def test_duration_stats():
    mean, std = duration_stats([[0, 30], [10, 60]])
    assert mean == 40.0 and std == pytest.approx(math.sqrt(200), abs=1e-12)
    assert duration_stats([[0, 5], [3, 8], [9, 14]]) == (5.0, 0.0)
    with pytest.raises(InvalidInputError):
        duration_stats([[0, 5]])


def test_pearson_closed_forms():
    a = np.array([1.0, 2.0, 3.0, 4.0])
    assert pearson(a, a) == pytest.approx(1.0, abs=1e-15)
    assert pearson(a, -a + 7) == pytest.approx(-1.0, abs=1e-15)
    b = [1.1, 1.9, 3.2, 3.8]
    # independent two-pass formula
    ma, mb = sum(a) / 4, sum(b) / 4
    num = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    den = math.sqrt(sum((x - ma) ** 2 for x in a) * sum((y - mb) ** 2 for y in b))
    assert pearson(a, b) == pytest.approx(num / den, abs=1e-12)


def test_pearson_undefined():
    with pytest.raises(UndefinedCorrelationError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(InvalidInputError):
        pearson([1, 2], [1, 2, 3])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=30), st.floats(-10, 10), st.floats(-100, 100))
def test_pearson_affine(a, c, d):
    a = np.array(a)
    if np.ptp(a) < 1e-6 or abs(c) < 1e-3:
        return
    assert pearson(a, c * a + d) == pytest.approx(np.sign(c), abs=1e-9)


# ---------------------------------------------------------------- fixture

def test_metric_fixture_hand_values():
    preds, gold = fixture_pairs()
    rep = evaluate(preds, gold)
    assert list(rep.accuracy) == [25.0, 25.0, 75.0, 75.0]
    assert list(evaluate(preds, gold, mode="boundary").accuracy) == [25.0, 50.0, 100.0, 100.0]
    assert (rep.mae_ts, rep.mae_te) == (4.0, 9.75)
    assert (rep.pred_mean, rep.gold_mean) == (35.25, 35.0)
    assert rep.pred_std == math.sqrt(1088.75 / 3)
    assert rep.gold_std == math.sqrt(500 / 3)
    assert rep.r == pytest.approx(345 / math.sqrt(1088.75 * 500), rel=1e-15)
    assert rep.n == 4


def test_aggregate_weights_by_test_size():
    preds, gold = fixture_pairs()
    a = evaluate(preds[:1], gold[:1])
    b = evaluate(preds[1:], gold[1:])
    agg = aggregate([a, b])
    np.testing.assert_allclose(agg.accuracy, (a.accuracy * 1 + b.accuracy * 3) / 4)
    assert agg.mae_ts == pytest.approx((a.mae_ts + 3 * b.mae_ts) / 4)
    assert agg.n == 4
    # accuracy and MAE aggregates equal the pooled values
    full = evaluate(preds, gold)
    np.testing.assert_allclose(agg.accuracy, full.accuracy)
    assert agg.mae_te == pytest.approx(full.mae_te)


def test_report_text_and_csv(tmp_path):
    preds, gold = fixture_pairs()
    rep = evaluate(preds, gold)
    text = format_report(rep, ["fixture"])
    header = text.splitlines()[0].split()
    assert header[:7] == ["<=5", "<=10", "<=15", "<=20", "|", "dTs", "dTe"]
    assert "25.0" in text.splitlines()[1] and "9.75" in text
    write_report_csv(tmp_path / "r.csv", rep, ["fixture"])
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("label,mode,acc_le_5,acc_le_10,acc_le_15,acc_le_20,mae_ts,mae_te")
    assert lines[1].split(",")[2:4] == ["25", "25"]


# ---------------------------------------------------------------- splits

def test_kfold_ten_items():
    folds = kfold_split(10, 5, seed=3)
    tests = [set(f.test) for f in folds]
    assert all(len(t) == 2 for t in tests)
    assert set().union(*tests) == set(range(10))
    assert sum(len(t) for t in tests) == 10


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 300), st.integers(2, 10), st.integers(0, 1000))
def test_kfold_partitions(n, k, seed):
    if n < k:
        with pytest.raises(InvalidInputError):
            kfold_split(n, k)
        return
    folds = kfold_split(n, k, 0.15, seed)
    assert len(folds) == k
    sizes = [f.test.size for f in folds]
    assert max(sizes) - min(sizes) <= 1
    assert np.array_equal(np.sort(np.concatenate([f.test for f in folds])), np.arange(n))
    for f in folds:
        parts = [set(f.train), set(f.validation), set(f.test)]
        assert sum(map(len, parts)) == n and set().union(*parts) == set(range(n))
        assert f.validation.size == math.floor(0.15 * (n - f.test.size))
    again = kfold_split(n, k, 0.15, seed)
    assert all(np.array_equal(a.test, b.test) and np.array_equal(a.train, b.train)
               for a, b in zip(folds, again))


def test_loso_three_speakers():
    speakers = ["s1", "s2", "s3", "s1", "s2", "s3", "s1"]
    folds = loso_split(speakers)
    assert list(folds) == ["s1", "s2", "s3"]
    covered = set()
    for name, f in folds.items():
        assert {speakers[i] for i in f.test} == {name}
        assert name not in {speakers[i] for i in np.concatenate([f.train, f.validation])}
        covered |= set(f.test)
    assert covered == set(range(len(speakers)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from("abcdef"), min_size=2, max_size=80), st.integers(0, 100))
def test_loso_partitions(speakers, seed):
    if len(set(speakers)) < 2:
        with pytest.raises(InvalidInputError):
            loso_split(speakers)
        return
    for name, f in loso_split(speakers, 0.15, seed).items():
        idx = np.concatenate([f.train, f.validation, f.test])
        assert np.array_equal(np.sort(idx), np.arange(len(speakers)))
        assert all(speakers[i] == name for i in f.test)
        assert all(speakers[i] != name for i in np.concatenate([f.train, f.validation]))


def test_train_val_split():
    tr, va = train_val_split(100, 0.15, seed=1)
    assert va.size == 15 and tr.size == 85 and not set(tr) & set(va)
    tr, va = train_val_split(2, 0.15)
    assert va.size == 1 and tr.size == 1
    with pytest.raises(InvalidInputError):
        train_val_split(1)
