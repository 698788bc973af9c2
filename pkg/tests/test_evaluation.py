from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rockmass.errors import (
    ClassTooSmall,
    DegeneratePredictions,
    DegenerateVariance,
    EmptyMatrix,
    EmptySubset,
    SingleClassTruth,
    UnknownLabel,
)
from rockmass.evaluation import (
    LOG_BAND,
    ConfusionMatrix,
    classification_metrics,
    confusion_matrix,
    f1_from_macros,
    fold_assignments,
    holdout_eval,
    kfold_cv,
    log_band_outliers,
    normalize,
    qq_points,
    random_split,
    regression_metrics,
    residual_linear_correction,
    roc_auc_binary,
    roc_auc_macro,
    stratified_split,
    zone_filtered_eval,
)
from rockmass.models import ModelSpec
from rockmass.pipeline import Pipeline, pipeline_fit
from rockmass.qsystem import FINE_CLASSES

COUNTS = {"A": 539, "B": 10057, "C": 9208, "D": 2571, "E1": 642, "E2": 260}


def _reference_labels():
    return np.concatenate([[c] * n for c, n in COUNTS.items()]).astype(object)


# ---------------------------------------------------------------- metrics


def _brute_metrics(y_true, y_pred):
    """Loop-based reference using exact fractions."""
    labels = sorted(set(y_true) | set(y_pred))
    n = len(y_true)
    correct = sum(1 for t, p in zip(y_true, y_pred) if t == p)
    recalls, precisions = [], []
    for c in labels:
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        n_true = sum(1 for t in y_true if t == c)
        n_pred = sum(1 for p in y_pred if p == c)
        if n_true:
            recalls.append(Fraction(tp, n_true))
        precisions.append(Fraction(tp, n_pred) if n_pred else Fraction(0))
    rec = sum(recalls) / len(recalls)
    prec = sum(precisions) / len(precisions)
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else Fraction(0)
    return Fraction(correct, n), rec, prec, f1


@settings(max_examples=1000)
@given(
    st.lists(st.tuples(st.sampled_from("ABCD"), st.sampled_from("ABCDE")), min_size=1, max_size=40)
)
def test_metrics_match_loop_oracle(pairs):
    y_true = [t for t, _ in pairs]
    y_pred = [p for _, p in pairs]
    rep = classification_metrics(confusion_matrix(y_true, y_pred))
    acc, rec, prec, f1 = _brute_metrics(y_true, y_pred)
    assert rep.accuracy == pytest.approx(float(acc), abs=1e-15)
    assert rep.balanced_accuracy == pytest.approx(float(rec), abs=1e-15)
    assert rep.precision_macro == pytest.approx(float(prec), abs=1e-15)
    assert rep.f1_macro == pytest.approx(float(f1), abs=1e-15)
    for v in (rep.accuracy, rep.balanced_accuracy, rep.precision_macro, rep.f1_macro):
        assert 0.0 <= v <= 1.0


@given(st.lists(st.tuples(st.sampled_from("ABC"), st.sampled_from("ABC")), min_size=1, max_size=40))
def test_balanced_accuracy_is_mean_recall_diagonal(pairs):
    cm = confusion_matrix([t for t, _ in pairs], [p for _, p in pairs])
    rows = cm.counts.sum(axis=1) > 0
    diag = np.diag(normalize(cm, "row"))[rows]
    assert classification_metrics(cm).balanced_accuracy == pytest.approx(diag.mean(), abs=1e-15)


def test_diagonal_matrix_all_ones():
    y = ["A", "B", "C", "C"]
    rep = classification_metrics(confusion_matrix(y, y))
    assert (rep.accuracy, rep.balanced_accuracy, rep.precision_macro, rep.f1_macro) == (1.0, 1.0, 1.0, 1.0)


def test_always_majority_reference_counts():
    y = _reference_labels()
    rep = classification_metrics(confusion_matrix(y, np.full(len(y), "B", dtype=object)))
    assert rep.accuracy == pytest.approx(10057 / 23277) and round(rep.accuracy, 3) == 0.432
    assert rep.balanced_accuracy == pytest.approx(1 / 6)


def test_f1_harmonic_mean_of_macros():
    assert f1_from_macros(0.78, 0.86) == pytest.approx(2 * 0.78 * 0.86 / 1.64)
    assert round(f1_from_macros(0.78, 0.86), 3) == 0.818
    assert f1_from_macros(0, 0) == 0.0


def test_per_class_f1_option():
    y_true = ["A", "A", "B", "B", "C"]
    y_pred = ["A", "B", "B", "B", "A"]
    cm = confusion_matrix(y_true, y_pred)
    per_class = classification_metrics(cm, f1="per_class")
    # per-class F1: A 0.5, B 0.8, C 0
    assert per_class.f1_macro == pytest.approx((0.5 + 0.8 + 0.0) / 3)
    assert per_class.f1_macro != classification_metrics(cm).f1_macro


def test_empty_and_unknown():
    with pytest.raises(EmptyMatrix):
        classification_metrics(ConfusionMatrix(("A", "B"), np.zeros((2, 2), dtype=np.int64)))
    with pytest.raises(UnknownLabel):
        confusion_matrix(["A", "Z"], ["A", "A"], roster=("A", "B"))


def test_confusion_conservation_and_roster():
    cm = confusion_matrix(["B", "A", "E"], ["AB", "A", "E"], roster=None)
    assert cm.roster == ("A", "AB", "B", "E") and cm.n == 3
    cm2 = confusion_matrix(["A"], ["A"], roster=("A", "B", "C"))
    assert cm2.counts.shape == (3, 3)


def test_normalization_examples():
    counts = np.zeros((6, 6), dtype=np.int64)
    counts[0, :2] = [75, 4]
    cm = ConfusionMatrix(FINE_CLASSES, counts)
    assert round(normalize(cm, "row")[0, 0], 2) == 0.95
    y = list(FINE_CLASSES)
    ident = confusion_matrix(y, y)
    assert np.array_equal(normalize(ident, "row"), np.eye(6))
    assert np.array_equal(normalize(ident, "column"), np.eye(6))


@given(st.lists(st.integers(0, 20), min_size=16, max_size=16))
def test_column_normalization_is_transposed_row_normalization(vals):
    M = np.array(vals, dtype=np.int64).reshape(4, 4)
    cm = ConfusionMatrix(("a", "b", "c", "d"), M)
    cmT = ConfusionMatrix(("a", "b", "c", "d"), M.T.copy())
    assert np.allclose(normalize(cm, "column"), normalize(cmT, "row").T)
    row = normalize(cm, "row")
    nonempty = M.sum(axis=1) > 0
    assert np.allclose(row[nonempty].sum(axis=1), 1.0)


# ---------------------------------------------------------------- ROC AUC


def _brute_auc(pos, scores):
    P = [s for s, p in zip(scores, pos) if p]
    N = [s for s, p in zip(scores, pos) if not p]
    return sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in P for b in N) / (len(P) * len(N))


def test_auc_hand_cases():
    pos = [1, 1, 0, 0]
    assert roc_auc_binary(pos, [0.9, 0.8, 0.4, 0.7]) == 1.0
    # one discordant pair out of four
    assert roc_auc_binary(pos, [0.9, 0.7, 0.4, 0.8]) == 0.75
    # positives .9/.4 against negatives .8/.7: two of four pairs are concordant
    assert roc_auc_binary(pos, [0.9, 0.4, 0.8, 0.7]) == 0.5
    for s in ([0.9, 0.8, 0.4, 0.7], [0.9, 0.7, 0.4, 0.8], [0.9, 0.4, 0.8, 0.7]):
        assert roc_auc_binary(pos, s) == _brute_auc(pos, s)


def test_auc_constant_and_perfect():
    y = np.array(["A", "B", "C"] * 10, dtype=object)
    P = np.full((30, 3), 1 / 3)
    assert roc_auc_macro(y, P, ("A", "B", "C")) == 0.5
    onehot = np.eye(3)[[("A", "B", "C").index(c) for c in y]]
    assert roc_auc_macro(y, onehot, ("A", "B", "C")) == 1.0
    with pytest.raises(SingleClassTruth):
        roc_auc_macro(["A"] * 4, np.ones((4, 2)) / 2, ("A", "B"))


@given(
    st.lists(st.tuples(st.booleans(), st.integers(0, 20)), min_size=2, max_size=40).filter(
        lambda v: any(p for p, _ in v) and not all(p for p, _ in v)
    )
)
def test_auc_matches_pairwise_oracle_and_is_rank_invariant(data):
    pos = [p for p, _ in data]
    s = np.array([x for _, x in data], dtype=float)
    auc = roc_auc_binary(pos, s)
    assert auc == pytest.approx(_brute_auc(pos, s.tolist()), abs=1e-12)
    assert roc_auc_binary(pos, np.exp(s / 3) * 5 - 2) == pytest.approx(auc, abs=1e-12)


# ---------------------------------------------------------------- regression


def test_regression_examples():
    rep = regression_metrics([1, 2, 3], [1, 2, 4])
    assert rep.r2 == pytest.approx(0.5) and rep.mse == pytest.approx(1 / 3) and rep.mae == pytest.approx(1 / 3)
    perfect = regression_metrics([1, 5, 2], [1, 5, 2])
    assert perfect.r2 == 1.0 and perfect.mse == 0.0
    y = np.random.default_rng(0).normal(size=50)
    mean_pred = regression_metrics(y, np.full(50, y.mean()))
    assert mean_pred.r2 == pytest.approx(0.0, abs=1e-12) and mean_pred.mse == pytest.approx(np.var(y))
    with pytest.raises(DegenerateVariance):
        regression_metrics([2, 2, 2], [1, 2, 3])


@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=2, max_size=30))
def test_regression_bounds(pairs):
    y = np.array([a for a, _ in pairs])
    p = np.array([b for _, b in pairs])
    # tiny spreads underflow to zero variance, which must be reported
    if float(np.sum((y - y.mean()) ** 2)) == 0:
        with pytest.raises(DegenerateVariance):
            regression_metrics(y, p)
        return
    rep = regression_metrics(y, p)
    assert rep.mse >= 0 and rep.r2 <= 1.0


def test_qq_normal_sample():
    from statistics import NormalDist

    n = 1000
    r = np.random.default_rng(42).normal(3.0, 2.0, size=n)
    th, ob = qq_points(r)
    gap = np.abs(ob - th)
    # extreme order statistics scatter by ~0.3 at n = 1000, so the fixed
    # tolerance applies to the central 90% and the tails get a per-point bound
    assert gap[50:-50].max() < 0.15
    pos = (np.arange(1, n + 1) - 0.5) / n
    sd = np.sqrt(pos * (1 - pos) / n) / np.array([NormalDist().pdf(t) for t in th])
    assert np.all(gap < 5 * sd + 0.05)


def test_qq_symmetric_and_skewed():
    th, ob = qq_points(np.array([-3.0, -1.0, -0.5, 0.0, 0.5, 1.0, 3.0]))
    assert np.allclose(th, -th[::-1]) and np.allclose(ob, -ob[::-1])
    skew = -np.random.default_rng(1).exponential(size=500)
    th, ob = qq_points(skew)
    low = th < -1.5
    assert np.all(ob[low] < th[low])


def test_log_band():
    assert LOG_BAND == pytest.approx(0.30103, abs=1e-5)
    y = np.array([0.0, 0.0, 1.0])
    assert not log_band_outliers(y, y).any()
    flags = log_band_outliers([0.0, 0.0], [math.log10(2.1), math.log10(1.9)])
    assert list(flags) == [True, False]


def test_linear_correction():
    rng = np.random.default_rng(0)
    y = rng.normal(size=200)
    c = residual_linear_correction(y, 0.5 * y)
    assert c.a == pytest.approx(2.0) and c.b == pytest.approx(0.0, abs=1e-12)
    unbiased = residual_linear_correction(y, y)
    assert unbiased.a == pytest.approx(1.0) and unbiased.b == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DegeneratePredictions):
        residual_linear_correction(y, np.ones(200))


@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=3, max_size=40))
def test_linear_correction_properties(pairs):
    y = np.array([a for a, _ in pairs])
    p = np.array([b for _, b in pairs])
    if np.ptp(p) < 1e-3:
        return
    c = residual_linear_correction(y, p)
    res = y - c.corrected
    scale = max(1.0, np.abs(y).max())
    assert abs(res.mean()) < 1e-9 * scale
    dp = c.corrected - c.corrected.mean()
    if np.dot(dp, dp) > 1e-6:
        assert abs(np.dot(dp, res) / np.dot(dp, dp)) < 1e-8 * scale
    assert np.mean(res ** 2) <= np.mean((y - p) ** 2) + 1e-9 * scale ** 2


# ---------------------------------------------------------------- splits and CV


def test_reference_split_sizes():
    tr, te = stratified_split(_reference_labels(), 0.25, seed=0)
    assert (len(tr), len(te)) == (17457, 5820)


def test_split_counts_per_class():
    y = np.repeat(np.array(FINE_CLASSES, dtype=object), 100)
    tr, te = stratified_split(y, 0.25, seed=2)
    for c in FINE_CLASSES:
        assert np.sum(y[te] == c) == 25 and np.sum(y[tr] == c) == 75
    tr0, te0 = stratified_split(y, 0.0)
    assert len(tr0) == len(y) and len(te0) == 0
    with pytest.raises(ClassTooSmall):
        stratified_split(np.array(["A", "A", "B"], dtype=object))


@settings(max_examples=40)
@given(st.lists(st.sampled_from("ABCDE"), min_size=10, max_size=80), st.floats(0.05, 0.5), st.integers(0, 99))
def test_split_partition_and_proportion(labels, frac, seed):
    y = np.array(labels, dtype=object)
    counts = {c: int(np.sum(y == c)) for c in set(labels)}
    if min(counts.values()) < 2:
        with pytest.raises(ClassTooSmall):
            stratified_split(y, frac, seed)
        return
    tr, te = stratified_split(y, frac, seed)
    assert sorted(np.concatenate([tr, te]).tolist()) == list(range(len(y)))
    for c, n in counts.items():
        assert abs(np.sum(y[te] == c) - frac * n) <= 1 + 1e-9


def test_random_split():
    tr, te = random_split(10, 0.25, seed=1)
    assert len(te) == 3 and sorted(np.concatenate([tr, te]).tolist()) == list(range(10))


@settings(max_examples=40)
@given(st.lists(st.sampled_from("ABC"), min_size=15, max_size=80), st.integers(2, 5), st.integers(0, 50))
def test_folds_stratified(labels, k, seed):
    y = np.array(labels, dtype=object)
    if min(np.sum(y == c) for c in set(labels)) < k:
        with pytest.raises(ClassTooSmall):
            fold_assignments(y, k, seed)
        return
    folds = fold_assignments(y, k, seed)
    sizes = np.bincount(folds, minlength=k)
    assert sizes.sum() == len(y) and sizes.max() - sizes.min() <= 1
    for c in set(labels):
        per = np.bincount(folds[y == c], minlength=k)
        assert per.max() - per.min() <= 1


def test_cv_memorizer_and_dummy():
    # every class is one repeated point, so each held-out row has an exact twin in training
    y = np.array(list("ABC") * 20, dtype=object)
    X = np.array([{"A": [0.0, 0, 0], "B": [1.0, 2, 0], "C": [3.0, 0, 1]}[c] for c in y])
    mem = kfold_cv(Pipeline(ModelSpec("knn", params={"k": 1}), scaler="none"), X, y, k=5)
    assert all(r.accuracy == 1.0 for r in mem.reports)
    dummy = kfold_cv(Pipeline(ModelSpec("dummy")), X, y, k=5, seed=3)
    assert all(r.balanced_accuracy == pytest.approx(1 / 3) for r in dummy.reports)
    assert sorted(np.bincount(dummy.folds).tolist()) == [12] * 5
    assert dummy.confusion.n == len(y)


def test_cv_regression_summary():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(100, 2))
    y = X[:, 0] * 3 + rng.normal(size=100) * 0.1
    res = kfold_cv(Pipeline(ModelSpec("linear_regression", "regression")), X, y, k=4)
    assert res.summary["r2"]["min"] > 0.95
    assert res.summary["r2"]["min"] <= res.summary["r2"]["mean"] <= res.summary["r2"]["max"]


def test_holdout_roster_keeps_absent_groups(blobs):
    X, y = blobs
    res = holdout_eval(Pipeline(ModelSpec("knn")), X, y, roster=("A", "B", "C", "D"))
    assert res.confusion.roster == ("A", "B", "C", "D")
    assert res.confusion.n == len(res.test_index)
    assert res.test.balanced_accuracy == 1.0


def test_zone_filtered_eval(small_table):
    y = small_table.q_class.astype(object)
    fp = pipeline_fit(Pipeline(ModelSpec("knn")), small_table.X, y)
    reg = zone_filtered_eval(fp, small_table.X, y, small_table.zone, "Regular")
    tra = zone_filtered_eval(fp, small_table.X, y, small_table.zone, "Transition")
    assert reg.n + tra.n == len(y)
    with pytest.raises(EmptySubset):
        zone_filtered_eval(fp, small_table.X, y, ["Regular"] * len(y), "Transition")


def test_zone_partition_additivity(small_table):
    from rockmass.pipeline import pipeline_predict

    y = small_table.q_class.astype(object)
    fp = pipeline_fit(Pipeline(ModelSpec("dummy")), small_table.X, y)
    pred = pipeline_predict(fp, small_table.X)
    roster = tuple(fp.classes)
    zones = small_table.zone.astype(object)
    parts = [confusion_matrix(y[zones == z], pred[zones == z], roster) for z in ("Regular", "Transition")]
    assert np.array_equal((parts[0] + parts[1]).counts, confusion_matrix(y, pred, roster).counts)
