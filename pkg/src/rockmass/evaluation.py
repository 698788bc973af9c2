"""Splits, cross-validation, classification / regression metrics and diagnostics."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from statistics import NormalDist
from typing import Any, Sequence

import numpy as np

from rockmass.errors import (
    ClassTooSmall,
    DegeneratePredictions,
    DegenerateVariance,
    EmptyMatrix,
    EmptySubset,
    SingleClassTruth,
    UnknownLabel,
)
from rockmass.qsystem import canonical_order

LOG_BAND = math.log10(2.0)


# ---------------------------------------------------------------- confusion matrix


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts with rows = true label and columns = predicted label."""

    roster: tuple
    counts: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def C(self) -> int:
        return len(self.roster)

    @property
    def tp(self) -> np.ndarray:
        return np.diag(self.counts).astype(np.int64)

    @property
    def fn(self) -> np.ndarray:
        return self.counts.sum(axis=1) - self.tp

    @property
    def fp(self) -> np.ndarray:
        return self.counts.sum(axis=0) - self.tp

    @property
    def tn(self) -> np.ndarray:
        return self.n - self.tp - self.fn - self.fp

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.roster != other.roster:
            raise UnknownLabel("cannot add confusion matrices over different rosters")
        return ConfusionMatrix(self.roster, self.counts + other.counts)

    def to_dict(self) -> dict:
        return {"roster": list(self.roster), "counts": self.counts.tolist()}


def confusion_matrix(y_true, y_pred, roster: Sequence | None = None) -> ConfusionMatrix:
    y_true = list(np.asarray(y_true, dtype=object).tolist())
    y_pred = list(np.asarray(y_pred, dtype=object).tolist())
    if len(y_true) != len(y_pred):
        raise ValueError(f"{len(y_true)} true labels vs {len(y_pred)} predictions")
    roster = tuple(canonical_order(y_true + y_pred)) if roster is None else tuple(roster)
    index = {c: i for i, c in enumerate(roster)}
    counts = np.zeros((len(roster), len(roster)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        if t not in index:
            raise UnknownLabel(f"true label {t!r} not in roster {roster}")
        if p not in index:
            raise UnknownLabel(f"predicted label {p!r} not in roster {roster}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(roster, counts)


def normalize(cm: ConfusionMatrix, axis: str = "row") -> np.ndarray:
    """Row normalization puts recall on the diagonal, column normalization precision.

    Empty rows (columns) stay zero.
    """
    c = cm.counts.astype(np.float64)
    if axis in ("row", "true", "recall"):
        s = c.sum(axis=1, keepdims=True)
    elif axis in ("column", "col", "pred", "precision"):
        s = c.sum(axis=0, keepdims=True)
    else:
        raise ValueError(f"axis must be 'row' or 'column', got {axis!r}")
    return np.divide(c, s, out=np.zeros_like(c), where=s > 0)


# ---------------------------------------------------------------- metrics


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    balanced_accuracy: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    f1_per_class_mean: float
    per_class_recall: dict
    per_class_precision: dict
    roc_auc_macro: float | None = None
    n: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def classification_metrics(cm: ConfusionMatrix, f1: str = "macro_average") -> MetricsReport:
    """Accuracy, balanced accuracy, macro precision and F1.

    ``f1_macro`` is the harmonic mean of macro precision and macro recall.
    With ``f1="per_class"`` the reported ``f1_macro`` is instead the mean of
    per-class F1 scores (also always available as ``f1_per_class_mean``).

    Recall is averaged over classes that occur in the truth; precision over
    classes that occur in the truth or the predictions, a never-predicted
    class contributing precision 0.
    """
    if cm.n == 0:
        raise EmptyMatrix("confusion matrix holds no samples")
    tp, fn, fp = cm.tp.astype(float), cm.fn.astype(float), cm.fp.astype(float)
    true_n = tp + fn
    pred_n = tp + fp
    present = true_n > 0
    involved = present | (pred_n > 0)
    if (~present & involved).any():
        warnings.warn("some classes are absent from the truth; their recall is excluded", UserWarning, stacklevel=2)
    never = present & (pred_n == 0)
    if never.any():
        warnings.warn(
            f"classes never predicted (precision set to 0): {[cm.roster[i] for i in np.flatnonzero(never)]}",
            UserWarning,
            stacklevel=2,
        )
    recall = np.divide(tp, true_n, out=np.zeros_like(tp), where=true_n > 0)
    precision = np.divide(tp, pred_n, out=np.zeros_like(tp), where=pred_n > 0)
    acc = float(tp.sum() / cm.n)
    # plain left-to-right sums in roster order, so results do not depend on numpy's pairwise summation
    rec_m = sum(recall[present].tolist()) / int(present.sum())
    prec_m = sum(precision[involved].tolist()) / int(involved.sum())
    f1_eq = 0.0 if prec_m + rec_m == 0 else 2 * prec_m * rec_m / (prec_m + rec_m)
    denom = precision + recall
    f1_c = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    f1_pc = sum(f1_c[involved].tolist()) / int(involved.sum())
    if f1 not in ("macro_average", "per_class"):
        raise ValueError("f1 must be 'macro_average' or 'per_class'")
    return MetricsReport(
        accuracy=acc,
        balanced_accuracy=rec_m,
        precision_macro=prec_m,
        recall_macro=rec_m,
        f1_macro=f1_eq if f1 == "macro_average" else f1_pc,
        f1_per_class_mean=f1_pc,
        per_class_recall={str(c): float(r) for c, r, p in zip(cm.roster, recall, present) if p},
        per_class_precision={str(c): float(p) for c, p, i in zip(cm.roster, precision, involved) if i},
        n=cm.n,
    )


def f1_from_macros(precision_macro: float, recall_macro: float) -> float:
    s = precision_macro + recall_macro
    return 0.0 if s == 0 else 2 * precision_macro * recall_macro / s


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc_binary(positive, scores) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie)."""
    positive = np.asarray(positive, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassTruth("AUC needs both positive and negative samples")
    ranks = _average_ranks(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_auc_macro(y_true, proba, roster: Sequence) -> float:
    """One-vs-rest AUC per class present in ``y_true``, macro-averaged.

    ``proba`` columns follow ``roster``.
    """
    y_true = np.asarray(y_true, dtype=object)
    proba = np.asarray(proba, dtype=np.float64)
    roster = list(roster)
    if proba.ndim != 2 or proba.shape[1] != len(roster):
        raise ValueError("probability columns must match the roster")
    present = [c for c in roster if np.any(y_true == c)]
    unknown = set(y_true.tolist()) - set(roster)
    if unknown:
        raise UnknownLabel(f"labels {sorted(map(str, unknown))} not in roster")
    if len(present) < 2:
        raise SingleClassTruth("ROC AUC needs at least two classes in the truth")
    return float(np.mean([roc_auc_binary(y_true == c, proba[:, roster.index(c)]) for c in present]))


# ---------------------------------------------------------------- regression


@dataclass(frozen=True, eq=False)
class RegressionReport:
    r2: float
    mse: float
    mae: float
    y_true: np.ndarray
    y_pred: np.ndarray
    y_mean: float

    @property
    def residuals(self) -> np.ndarray:
        return self.y_true - self.y_pred

    def to_dict(self) -> dict:
        return {"r2": self.r2, "mse": self.mse, "mae": self.mae, "n": int(len(self.y_true)), "y_mean": self.y_mean}


def regression_metrics(y_true, y_pred) -> RegressionReport:
    y = np.asarray(y_true, dtype=np.float64)
    p = np.asarray(y_pred, dtype=np.float64)
    if y.shape != p.shape or y.ndim != 1:
        raise ValueError("y_true and y_pred must be aligned 1-D arrays")
    if len(y) < 2:
        raise ValueError("need at least 2 samples")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(p))):
        raise ValueError("values must be finite")
    y_mean = float(np.mean(y))
    sst = float(np.sum((y - y_mean) ** 2))
    if sst == 0:
        raise DegenerateVariance("all true values are equal; R^2 is undefined")
    sse = float(np.sum((y - p) ** 2))
    return RegressionReport(
        r2=1.0 - sse / sst,
        mse=sse / len(y),
        mae=float(np.mean(np.abs(y - p))),
        y_true=y,
        y_pred=p,
        y_mean=y_mean,
    )


def qq_points(residuals) -> tuple[np.ndarray, np.ndarray]:
    """(theoretical, observed) pairs: standardized sorted residuals against
    standard-normal quantiles at plotting positions ``(i - 0.5) / n``."""
    r = np.sort(np.asarray(residuals, dtype=np.float64))
    n = len(r)
    if n < 3:
        raise ValueError("need at least 3 residuals")
    sd = r.std(ddof=1)
    observed = (r - r.mean()) / sd if sd > 0 else np.zeros(n)
    nd = NormalDist()
    theoretical = np.array([nd.inv_cdf((i - 0.5) / n) for i in range(1, n + 1)])
    return theoretical, observed


def log_band_outliers(y_true_log, y_pred_log, band: float = LOG_BAND) -> np.ndarray:
    return np.abs(np.asarray(y_pred_log, dtype=np.float64) - np.asarray(y_true_log, dtype=np.float64)) > band


@dataclass(frozen=True, eq=False)
class LinearCorrection:
    a: float
    b: float
    corrected: np.ndarray

    def apply(self, y_pred) -> np.ndarray:
        return self.a * np.asarray(y_pred, dtype=np.float64) + self.b


def residual_linear_correction(y_true, y_pred) -> LinearCorrection:
    """Least-squares fit ``y ~ a * y_pred + b`` and the corrected predictions."""
    y = np.asarray(y_true, dtype=np.float64)
    p = np.asarray(y_pred, dtype=np.float64)
    if len(y) < 3:
        raise DegeneratePredictions("need at least 3 samples")
    pm, ym = p.mean(), y.mean()
    dp = p - pm
    vp = float(np.dot(dp, dp))
    if vp <= 0:
        raise DegeneratePredictions("predictions have zero variance")
    a = float(np.dot(dp, y - ym) / vp)
    b = float(ym - a * pm)
    return LinearCorrection(a, b, a * p + b)


# ---------------------------------------------------------------- splits


def stratified_split(labels, test_fraction: float = 0.25, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Class-stratified train/test indices.

    The test set has ``ceil(test_fraction * n)`` rows. Each class gets
    ``floor(test_fraction * n_c)`` test rows; the remaining slots go to the
    classes with the largest fractional remainders (canonical class order on
    ties), so every class is within one sample of its exact share.
    ``labels=None``-style regression use goes through ``random_split``.
    """
    y = np.asarray(labels, dtype=object)
    n = len(y)
    if not 0 <= test_fraction < 1:
        raise ValueError("test_fraction must lie in [0, 1)")
    if test_fraction == 0 or n == 0:
        return np.arange(n), np.zeros(0, dtype=np.int64)
    classes = canonical_order(y.tolist())
    members = {c: np.flatnonzero(y == c) for c in classes}
    small = [c for c in classes if len(members[c]) < 2]
    if small:
        raise ClassTooSmall(f"classes with fewer than 2 samples: {small}")
    exact = {c: test_fraction * len(members[c]) for c in classes}
    take = {c: int(math.floor(exact[c])) for c in classes}
    total = int(math.ceil(test_fraction * n - 1e-9))
    spare = total - sum(take.values())
    for c in sorted(classes, key=lambda c: (-(exact[c] - take[c]), classes.index(c)))[: max(spare, 0)]:
        take[c] += 1
    rng = np.random.default_rng(seed)
    test = []
    for c in classes:
        m = members[c]
        t = min(take[c], len(m) - 1)
        test.append(rng.permutation(m)[:t])
    test_idx = np.sort(np.concatenate(test))
    mask = np.ones(n, dtype=bool)
    mask[test_idx] = False
    return np.flatnonzero(mask), test_idx


def random_split(n: int, test_fraction: float = 0.25, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    if not 0 <= test_fraction < 1:
        raise ValueError("test_fraction must lie in [0, 1)")
    n_test = int(math.ceil(test_fraction * n - 1e-9))
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def fold_assignments(labels, k: int = 5, seed: int = 0, stratified: bool = True) -> np.ndarray:
    """Fold id per sample.

    Stratified: each class is shuffled and dealt round-robin, the dealing
    position carrying over from one class to the next, so class shares per
    fold differ by at most one and fold sizes by at most one.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    y = np.asarray(labels, dtype=object)
    n = len(y)
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=np.int64)
    if not stratified:
        if n < k:
            raise ClassTooSmall(f"{n} samples cannot fill {k} folds")
        perm = rng.permutation(n)
        folds[perm] = np.arange(n) % k
        return folds
    classes = canonical_order(y.tolist())
    small = [c for c in classes if np.sum(y == c) < k]
    if small:
        raise ClassTooSmall(f"classes with fewer than {k} samples: {small}")
    pos = 0
    for c in classes:
        m = rng.permutation(np.flatnonzero(y == c))
        folds[m] = (pos + np.arange(len(m))) % k
        pos = (pos + len(m)) % k
    return folds


# ---------------------------------------------------------------- evaluation drivers


def _summary(values: dict[str, list[float]]) -> dict[str, dict[str, float]]:
    out = {}
    for name, vals in values.items():
        vals = [v for v in vals if v is not None]
        if vals:
            out[name] = {"mean": float(np.mean(vals)), "min": float(np.min(vals)), "max": float(np.max(vals))}
    return out


@dataclass(frozen=True, eq=False)
class HoldoutResult:
    task: str
    train_index: np.ndarray
    test_index: np.ndarray
    fitted: Any
    test: Any  # MetricsReport | RegressionReport
    train: Any
    confusion: ConfusionMatrix | None
    y_pred: np.ndarray
    proba: np.ndarray | None

    def to_dict(self) -> dict:
        d = {
            "task": self.task,
            "n_train": int(len(self.train_index)),
            "n_test": int(len(self.test_index)),
            "test": self.test.to_dict(),
            "train": self.train.to_dict(),
        }
        if self.confusion is not None:
            d["confusion_matrix"] = self.confusion.to_dict()
        return d


def _score_classification(fp, X, y, roster, names=None):
    from rockmass.pipeline import pipeline_predict, pipeline_predict_proba

    pred = pipeline_predict(fp, X, names)
    proba = pipeline_predict_proba(fp, X, names)
    cm = confusion_matrix(y, pred, roster)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = classification_metrics(cm)
    try:
        auc = roc_auc_macro(y, _align_proba(proba, fp.classes, roster), roster)
    except SingleClassTruth:
        auc = None
    return MetricsReport(**{**asdict(rep), "roc_auc_macro": auc}), cm, pred, proba


def _align_proba(proba, classes, roster):
    out = np.zeros((proba.shape[0], len(roster)))
    pos = {c: i for i, c in enumerate(roster)}
    for j, c in enumerate(classes):
        out[:, pos[c]] = proba[:, j]
    return out


def _roster(y, extra) -> tuple:
    labels = list(dict.fromkeys(y.tolist()))
    if extra is not None:
        labels += [c for c in extra if c not in labels]
    return tuple(canonical_order(labels))


def holdout_eval(
    pipeline, X, y, test_fraction: float = 0.25, seed: int = 0, feature_names=None, roster=None
) -> HoldoutResult:
    """Split, fit the pipeline on the training part, score both parts.

    ``roster`` adds labels that should appear in the confusion matrix even
    when absent from ``y`` (e.g. every group of a grouping scheme).
    """
    from rockmass.pipeline import pipeline_fit, pipeline_predict_value

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if pipeline.task == "classification":
        tr, te = stratified_split(y, test_fraction, seed)
        fp = pipeline_fit(pipeline, X[tr], y[tr], feature_names)
        roster = _roster(y, roster)
        test_rep, cm, pred, proba = _score_classification(fp, X[te], y[te], roster, feature_names)
        train_rep, _, _, _ = _score_classification(fp, X[tr], y[tr], roster, feature_names)
        return HoldoutResult("classification", tr, te, fp, test_rep, train_rep, cm, pred, proba)
    tr, te = random_split(len(y), test_fraction, seed)
    fp = pipeline_fit(pipeline, X[tr], y[tr], feature_names)
    pred = pipeline_predict_value(fp, X[te], feature_names)
    test_rep = regression_metrics(y[te], pred)
    train_rep = regression_metrics(y[tr], pipeline_predict_value(fp, X[tr], feature_names))
    return HoldoutResult("regression", tr, te, fp, test_rep, train_rep, None, pred, None)


@dataclass(frozen=True, eq=False)
class CVResult:
    task: str
    k: int
    folds: np.ndarray
    reports: list
    summary: dict
    oof_pred: np.ndarray
    confusion: ConfusionMatrix | None = None

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "k": self.k,
            "fold_sizes": np.bincount(self.folds, minlength=self.k).tolist(),
            "folds": [r.to_dict() for r in self.reports],
            "summary": self.summary,
            "confusion_matrix": None if self.confusion is None else self.confusion.to_dict(),
        }


def kfold_cv(pipeline, X, y, k: int = 5, seed: int = 0, feature_names=None, roster=None) -> CVResult:
    """k-fold cross-validation with a fresh pipeline fit per fold."""
    from rockmass.pipeline import pipeline_fit, pipeline_predict_value

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    clf = pipeline.task == "classification"
    folds = fold_assignments(y, k, seed, stratified=clf)
    reports = []
    oof = np.empty(len(y), dtype=object if clf else np.float64)
    roster = _roster(y, roster) if clf else None
    total_cm = None
    for f in range(k):
        te = np.flatnonzero(folds == f)
        tr = np.flatnonzero(folds != f)
        fp = pipeline_fit(pipeline, X[tr], y[tr], feature_names)
        if clf:
            rep, cm, pred, _ = _score_classification(fp, X[te], y[te], roster, feature_names)
            total_cm = cm if total_cm is None else total_cm + cm
        else:
            pred = pipeline_predict_value(fp, X[te], feature_names)
            rep = regression_metrics(y[te], pred)
        oof[te] = pred
        reports.append(rep)
    if clf:
        keys = ("balanced_accuracy", "accuracy", "precision_macro", "f1_macro", "roc_auc_macro")
    else:
        keys = ("r2", "mse", "mae")
    summary = _summary({key: [getattr(r, key) for r in reports] for key in keys})
    return CVResult("classification" if clf else "regression", k, folds, reports, summary, oof, total_cm)


def zone_filtered_eval(fitted, X, y, zones, zone, feature_names=None) -> MetricsReport:
    """Metrics over the rows whose zone tag equals ``zone``."""
    from rockmass.pipeline import FittedPipeline

    zones = np.asarray([None if z is None else str(z) for z in zones], dtype=object)
    mask = zones == str(zone)
    if not mask.any():
        raise EmptySubset(f"no samples tagged {zone!s}")
    X = np.asarray(X, dtype=np.float64)[mask]
    y = np.asarray(y)[mask]
    if isinstance(fitted, FittedPipeline):
        roster = tuple(fitted.classes)
        rep, _, _, _ = _score_classification(fitted, X, y, roster, feature_names)
        return rep
    from rockmass.models import predict, predict_proba

    pred = predict(fitted, X, feature_names)
    cm = confusion_matrix(y, pred, fitted.classes)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = classification_metrics(cm)
    try:
        auc = roc_auc_macro(y, predict_proba(fitted, X, feature_names), fitted.classes)
    except SingleClassTruth:
        auc = None
    return MetricsReport(**{**asdict(rep), "roc_auc_macro": auc})
