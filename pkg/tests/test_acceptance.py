"""Acceptance criteria 1-11, one test and one PASS/FAIL line each.

Run ``pytest tests/test_acceptance.py -v`` and read the "acceptance criteria"
section of the terminal summary.
"""

from __future__ import annotations

import math
import shutil
import time
from fractions import Fraction

import numpy as np
import pytest

from rockmass import cli
from rockmass.evaluation import (
    LOG_BAND,
    classification_metrics,
    confusion_matrix,
    f1_from_macros,
    holdout_eval,
    log_band_outliers,
    regression_metrics,
    residual_linear_correction,
    roc_auc_macro,
    stratified_split,
    zone_filtered_eval,
)
from rockmass.features import build_sections
from rockmass.models import ModelSpec
from rockmass.pipeline import Pipeline, pipeline_fit, pipeline_predict, pipeline_predict_proba, pipeline_predict_value
from rockmass.plots import svg_data
from rockmass.preprocess import regression_resample, smote_oversample
from rockmass.qsystem import FINE_CLASSES, apply_grouping, group_counts
from rockmass.synth import SynthSpec, generate

# section counts per class in the reference collection (1 m sections)
REFERENCE_COUNTS = {"A": 539, "B": 10057, "C": 9208, "D": 2571, "E1": 642, "E2": 260}


def _reference_labels():
    return np.concatenate([[c] * n for c, n in REFERENCE_COUNTS.items()]).astype(object)


# ---------------------------------------------------------------- 1


def _loop_classification(yt, yp):
    """Accuracy, mean recall, mean precision and their harmonic mean by plain loops."""
    labels = sorted(set(yt) | set(yp))
    correct = 0
    for t, p in zip(yt, yp):
        if t == p:
            correct += 1
    rec_sum, n_rec, prec_sum, n_prec = 0.0, 0, 0.0, 0
    for c in labels:
        tp = fn = fp = 0
        for t, p in zip(yt, yp):
            if t == c and p == c:
                tp += 1
            elif t == c:
                fn += 1
            elif p == c:
                fp += 1
        if tp + fn:
            rec_sum += tp / (tp + fn)
            n_rec += 1
        prec_sum += tp / (tp + fp) if tp + fp else 0.0
        n_prec += 1
    r, p = rec_sum / n_rec, prec_sum / n_prec
    return correct / len(yt), r, p, (2 * p * r / (p + r) if p + r else 0.0)


def _exact_regression(yt, yp):
    n = len(yt)
    mean = sum(Fraction(v) for v in yt) / n
    sse = sum((Fraction(a) - Fraction(b)) ** 2 for a, b in zip(yt, yp))
    sst = sum((Fraction(a) - mean) ** 2 for a in yt)
    return 1 - sse / sst, sse / n


def test_criterion_1_metric_oracles(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    cls_bad = reg_bad = 0
    for _ in range(1000):
        k = int(rng.integers(1, 11))
        n = int(rng.integers(1, 501))
        yt = rng.integers(0, k, n).tolist()
        yp = rng.integers(0, k, n).tolist()
        m = classification_metrics(confusion_matrix(yt, yp))
        if (m.accuracy, m.balanced_accuracy, m.precision_macro, m.f1_macro) != _loop_classification(yt, yp):
            cls_bad += 1
        if n >= 2 and len(set(yt)) > 1:
            rep = regression_metrics(yt, yp)
            r2, mse = _exact_regression(yt, yp)
            # a float mean is already rounded, so allow a few ulp against the exact rational value
            if not (math.isclose(rep.r2, r2, rel_tol=1e-13, abs_tol=1e-14) and math.isclose(rep.mse, mse, rel_tol=1e-13)):
                reg_bad += 1
    elapsed = time.perf_counter() - t0
    ok = cls_bad == 0 and reg_bad == 0 and elapsed < 10
    verdict(1, ok, f"1000 label sets, classification mismatches {cls_bad}, regression mismatches {reg_bad}, {elapsed:.1f}s")


# ---------------------------------------------------------------- 2


def test_criterion_2_dummy_baselines(verdict):
    y = _reference_labels()
    X = np.random.default_rng(0).normal(size=(len(y), 3))
    fp = pipeline_fit(Pipeline(ModelSpec("dummy")), X, y)
    rep = classification_metrics(confusion_matrix(y, pipeline_predict(fp, X)))
    auc = roc_auc_macro(y, pipeline_predict_proba(fp, X), fp.classes)

    yr = np.random.default_rng(1).gamma(2.0, 0.7, size=5000)
    fr = pipeline_fit(Pipeline(ModelSpec("dummy", "regression")), X[:5000], yr)
    reg = regression_metrics(yr, pipeline_predict_value(fr, X[:5000]))
    var = float(np.var(yr))
    ok = (
        abs(rep.accuracy - 0.432) <= 0.001
        and abs(rep.balanced_accuracy - 0.1667) <= 0.0001
        and abs(auc - 0.5) <= 0.01
        and reg.r2 == 0.0
        and abs(reg.mse - var) <= 1e-9
    )
    verdict(
        2,
        ok,
        f"accuracy {rep.accuracy:.4f}, balanced accuracy {rep.balanced_accuracy:.4f}, AUC {auc:.3f}, "
        f"regressor R2 {reg.r2!r}, MSE-var {reg.mse - var:.1e}",
    )


# ---------------------------------------------------------------- 3


def test_criterion_3_f1_from_printed_macros(verdict):
    f1 = f1_from_macros(0.78, 0.86)
    verdict(3, abs(f1 - 0.818) <= 0.005, f"F1 from precision 0.78 and balanced accuracy 0.86 = {f1:.4f}")


# ---------------------------------------------------------------- 4


def test_criterion_4_split_arithmetic(verdict):
    y = _reference_labels()
    tr, te = stratified_split(y, 0.25, seed=0)
    per_class_ok = all(abs(int(np.sum(y[te] == c)) - 0.25 * n) <= 1 for c, n in REFERENCE_COUNTS.items())
    disjoint = len(np.intersect1d(tr, te)) == 0 and len(tr) + len(te) == len(y)
    ok = (len(tr), len(te)) == (17457, 5820) and per_class_ok and disjoint
    verdict(4, ok, f"train/test {len(tr)}/{len(te)}, per-class within 1 of 25%: {per_class_ok}")


# ---------------------------------------------------------------- 5

TABLE_ROWS = {
    "AB, C, D, E": {"AB": 10596, "C": 9208, "D": 2571, "E": 902},
    "AB, CD, E": {"AB": 10596, "CD": 11779, "E": 902},
    "AB, CDE": {"AB": 10596, "CDE": 12681},
    "AB, DE": {"AB": 10596, "DE": 3473},
    "A, C, E": {"A": 539, "C": 9208, "E": 902},
    "A, B, C, D, E": {"A": 539, "B": 10057, "C": 9208, "D": 2571, "E": 902},
    "A, B, C, D, E1, E2": REFERENCE_COUNTS,
    "ABCD, E": {"ABCD": 22375, "E": 902},
}
# The reference table prints this row under the label "ABCDE1, E2", but its
# counts are the ABCD-vs-E split; the literal E2-vs-rest grouping differs.
MISLABELED_ROW = ("ABCDE1, E2", "ABCD, E", {"ABCD": 22375, "E": 902})


def test_criterion_5_grouping_conservation(verdict):
    total = sum(REFERENCE_COUNTS.values())
    bad = []
    for name, expected in TABLE_ROWS.items():
        grouped, dropped = group_counts(REFERENCE_COUNTS, name)
        if grouped != expected or sum(grouped.values()) + dropped != total:
            bad.append(name)
    printed, scheme, counts = MISLABELED_ROW
    if group_counts(REFERENCE_COUNTS, scheme)[0] != counts:
        bad.append(printed)
    totals_ok = sum(group_counts(REFERENCE_COUNTS, "AB, DE")[0].values()) == 14069
    literal, _ = group_counts(REFERENCE_COUNTS, printed)
    verdict(
        5,
        not bad and totals_ok,
        f"{len(TABLE_ROWS) + 1} rows reproduced, mismatches {bad}; AB,DE total 14069: {totals_ok}. "
        f"Note: row printed as {printed!r} matches scheme {scheme!r}; literal {printed!r} gives {literal}",
    )


# ---------------------------------------------------------------- 6


def _small_problem(task, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.array([[0, 0, 0, 0], [2, 1, 0, 1], [0, 2, 2, 0]], dtype=float)
    sizes = (20, 60, 40)
    X = np.vstack([rng.normal(c, 0.8, size=(n, 4)) for c, n in zip(centers, sizes)])
    if task == "classification":
        y = np.repeat(np.array(["A", "B", "C"], dtype=object), sizes)
    else:
        y = np.exp(X[:, 0] * 0.5) + rng.normal(0, 0.1, len(X))
    return X, y


def _model_specs(task):
    small = {
        "random_forest": {"n_trees": 8},
        "extra_trees": {"n_trees": 8},
        "gbt": {"n_rounds": 8},
        "logistic_regression": {"max_iter": 50},
    }
    kinds = ["dummy", "knn", "decision_tree", "random_forest", "extra_trees", "gbt"]
    kinds.append("logistic_regression" if task == "classification" else "linear_regression")
    specs = [ModelSpec(k, task, small.get(k, {}), seed=1) for k in kinds]
    members = [{"scaler": "minmax", "model": ModelSpec(k, task, small.get(k, {})).to_dict()} for k in ("knn", "extra_trees", "gbt")]
    specs.append(ModelSpec("voting", task, {"members": members}, seed=1))
    return specs


def test_criterion_6_leakage_sentinel(verdict):
    t0 = time.perf_counter()
    leaks, shapes = [], 0
    outliers = ("none", "mad", {"kind": "isolation_forest", "trees": 25}, {"kind": "both", "trees": 25})
    for task, balances in (("classification", ("none", "smote")), ("regression", ("none", {"kind": "resample", "per_bin_target": 30, "n_bins": 5}))):
        X, y = _small_problem(task)
        for spec in _model_specs(task):
            for out in outliers:
                for scaler in ("none", "minmax", "standard"):
                    for bal in balances:
                        pipe = Pipeline(spec, scaler, out, bal, seed=3)
                        base = holdout_eval(pipe, X, y, seed=5)
                        X2 = X.copy()
                        X2[base.test_index] = X2[base.test_index] * -37.0 + 1e3
                        moved = holdout_eval(pipe, X2, y, seed=5)
                        shapes += 1
                        if moved.fitted.fingerprint() != base.fitted.fingerprint():
                            leaks.append((task, spec.kind, str(out), scaler, str(bal)))
    elapsed = time.perf_counter() - t0
    verdict(6, not leaks and elapsed < 60, f"{shapes} pipeline shapes, {len(leaks)} fingerprint changes, {elapsed:.1f}s")


# ---------------------------------------------------------------- 7 and 8

SEEDS = range(5)


def _ba(y, p):
    return classification_metrics(confusion_matrix(y, p)).balanced_accuracy


def _voting(seed):
    members = [{"scaler": "minmax", "model": ModelSpec(k).to_dict()} for k in ("knn", "extra_trees", "gbt")]
    return ModelSpec("voting", "classification", {"members": members}, seed)


@pytest.fixture(scope="module")
def ordering_runs():
    """Per seed: held-out balanced accuracy of each model plus the fitted six-class voting model."""
    t0 = time.perf_counter()
    runs = []
    for seed in SEEDS:
        table = build_sections(generate(SynthSpec(seed=seed)).dataset)
        y = np.array([str(c) for c in table.q_class], dtype=object)
        yb = np.array([apply_grouping(c, "ABCD,E") for c in y], dtype=object)
        tr, te = stratified_split(y, 0.25, seed)
        scores, fitted = {}, {}
        specs = {
            "dummy": ModelSpec("dummy"),
            "decision_tree": ModelSpec("decision_tree", seed=seed),
            "knn": ModelSpec("knn"),
            "voting": _voting(seed),
        }
        for name, spec in specs.items():
            fp = pipeline_fit(Pipeline(spec, balance="smote", seed=seed), table.X[tr], y[tr])
            scores[name] = _ba(y[te], pipeline_predict(fp, table.X[te]))
            fitted[name] = fp
        trb, teb = stratified_split(yb, 0.25, seed)
        fb = pipeline_fit(Pipeline(_voting(seed), balance="smote", seed=seed), table.X[trb], yb[trb])
        scores["binary_voting"] = _ba(yb[teb], pipeline_predict(fb, table.X[teb]))
        runs.append({"scores": scores, "voting": fitted["voting"], "table": table, "y": y, "test": te})
    return runs, time.perf_counter() - t0


def test_criterion_7_synthetic_ordering(verdict, ordering_runs):
    runs, elapsed = ordering_runs
    mean = {k: float(np.mean([r["scores"][k] for r in runs])) for k in runs[0]["scores"]}
    ok = (
        mean["voting"] >= mean["knn"] >= mean["decision_tree"] >= mean["dummy"]
        and mean["voting"] - mean["dummy"] >= 0.4
        and mean["binary_voting"] >= mean["voting"]
        and elapsed < 600
    )
    detail = ", ".join(f"{k} {v:.3f}" for k, v in mean.items())
    verdict(7, ok, f"mean held-out balanced accuracy over {len(runs)} seeds: {detail}; {elapsed:.0f}s")


def test_criterion_8_transition_zone_effect(verdict, ordering_runs):
    runs, _ = ordering_runs
    gaps = []
    for r in runs:
        te = r["test"]
        zones = r["table"].zone[te]
        reg = zone_filtered_eval(r["voting"], r["table"].X[te], r["y"][te], zones, "Regular")
        tra = zone_filtered_eval(r["voting"], r["table"].X[te], r["y"][te], zones, "Transition")
        gaps.append((reg.balanced_accuracy, tra.balanced_accuracy))
    reg_m = float(np.mean([g[0] for g in gaps]))
    tra_m = float(np.mean([g[1] for g in gaps]))
    worst = min(a - b for a, b in gaps)
    verdict(8, reg_m - tra_m >= 0.05 and worst >= 0.05,
            f"voting model, 10 m smoothing: Regular {reg_m:.3f} vs Transition {tra_m:.3f} (smallest per-seed gap {worst:.3f})")


# ---------------------------------------------------------------- 9


def test_criterion_9_smote_and_resampling(verdict):
    y = _reference_labels()
    X = np.random.default_rng(9).normal(size=(len(y), 4))
    res = smote_oversample(X, y, seed=4, return_parents=True)
    u, n = np.unique(res.y, return_counts=True)
    counts_ok = dict(zip(u.tolist(), n.tolist())) == {c: 10057 for c in FINE_CLASSES}

    n0 = len(y)
    rng = np.random.default_rng(0)
    picks = rng.choice(len(res.y) - n0, size=10_000, replace=False)
    a = res.X[res.parents[picks, 0]]
    b = res.X[res.parents[picks, 1]]
    s = res.X[n0 + picks]
    eps = 1e-12 * np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    between = np.all((s >= np.minimum(a, b) - eps) & (s <= np.maximum(a, b) + eps), axis=1)

    yr = -np.random.default_rng(3).gamma(2.0, 0.5, size=3000) + 2.5
    Xr = np.column_stack([yr, np.random.default_rng(4).normal(size=len(yr))])
    rr = regression_resample(Xr, yr, n_bins=10, per_bin_target=500, seed=0, return_parents=True)
    cv = lambda c: float(np.std(c) / np.mean(c))
    before, after = cv(rr.bin_counts_before), cv(rr.bin_counts_after)
    ok = counts_ok and between.all() and after < before
    verdict(9, ok, f"SMOTE counts exact: {counts_ok}; {int(between.sum())}/10000 points between parents; "
                   f"bin-count CV {before:.3f} -> {after:.3f}")


# ---------------------------------------------------------------- 10


def test_criterion_10_regression_diagnostics(verdict):
    rng = np.random.default_rng(10)
    y = rng.normal(0.5, 1.0, 500)
    c = residual_linear_correction(y, 0.5 * y)
    recovered = abs(c.a - 2.0) <= 1e-6 and abs(c.b) <= 1e-6
    worse = 0
    for _ in range(200):
        yt = rng.normal(size=50)
        yp = rng.normal(size=50) * rng.uniform(0.1, 3) + rng.normal() + yt * rng.uniform(-1, 1)
        fit = residual_linear_correction(yt, yp)
        if np.mean((yt - fit.corrected) ** 2) > np.mean((yt - yp) ** 2) + 1e-12:
            worse += 1
    t = 10 ** rng.uniform(-2, 3, 1000)
    p = t * 10 ** rng.normal(0, 0.4, 1000)
    direct = [abs(math.log10(pv) - math.log10(tv)) > math.log10(2) for tv, pv in zip(t, p)]
    flags = log_band_outliers(np.log10(t), np.log10(p), LOG_BAND).tolist()
    ok = recovered and worse == 0 and flags == direct
    verdict(10, ok, f"a={c.a:.9f} b={c.b:.2e}; MSE increases {worse}/200; band flags agree on "
                    f"{sum(f == d for f, d in zip(flags, direct))}/1000 pairs")


# ---------------------------------------------------------------- 11


def _snapshot(directory):
    snap = {}
    for p in sorted(directory.rglob("*")):
        if p.is_file():
            text = p.read_text(encoding="utf-8")
            snap[str(p.relative_to(directory))] = svg_data(text) if p.suffix == ".svg" else text
    return snap


def _all_commands(root):
    data, agg = root / "data", root / "agg"
    return [
        ["synth", "--rounds", "200", "--seed", "11", "--out", str(data)],
        ["ingest", "--input", str(data), "--out", str(root / "ingest")],
        ["aggregate", "--input", str(data), "--out", str(agg)],
        ["train", "--model", "voting", "--balance", "smote", "--outliers", "mad", "--eval", "both",
         "--cv-folds", "3", "--seed", "4", "--input", str(agg), "--out", str(root / "train")],
        ["train", "--target", "log_q_base", "--model", "extra_trees", "--input", str(agg), "--out", str(root / "reg")],
        ["cv", "--model", "gbt", "--grouping", "ABCD,E", "--cv-folds", "3", "--input", str(agg), "--out", str(root / "cv")],
        ["tune", "--model", "knn", "--trials", "5", "--cv-folds", "3", "--input", str(agg), "--out", str(root / "tune")],
        ["predict", "--model-file", str(root / "train" / "model.json"), "--input", str(agg), "--out", str(root / "predict")],
        ["report", "--input", str(root / "train"), "--out", str(root / "report_cls")],
        ["report", "--input", str(root / "reg"), "--out", str(root / "report_reg")],
        ["report", "--input", str(root / "tune"), "--out", str(root / "report_tune")],
    ]


def test_criterion_11_determinism(verdict, tmp_path, capsys):
    root = tmp_path / "run"
    snaps, failures = [], []
    for _ in range(2):
        for argv in _all_commands(root):
            if cli.main(argv) != 0:
                failures.append(argv[0])
        snaps.append(_snapshot(root))
        shutil.rmtree(root)
    capsys.readouterr()
    differing = sorted(k for k in set(snaps[0]) | set(snaps[1]) if snaps[0].get(k) != snaps[1].get(k))
    n_cmd = len(_all_commands(root))
    verdict(11, not failures and not differing and len(snaps[0]) > 0,
            f"{n_cmd} commands x 2 runs, {len(snaps[0])} output files, differing {differing}, failed {failures}")
