"""Uniform fit / predict over every learner kind, plus voting ensembles."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from rockmass.errors import (
    BadValue,
    EmptyEnsemble,
    FeatureContractMismatch,
    HeterogeneousRoster,
    NotFitted,
)
from rockmass.models import boosting, dummy, knn, linear, trees
from rockmass.models.base import ModelSpec, TrainedModel, derive_seed
from rockmass.qsystem import canonical_order


class _Learner:
    def __init__(self, fit_state, proba=None, value=None, predict_index=None):
        self.fit_state = fit_state
        self.proba = proba
        self.value = value
        self.predict_index = predict_index


_LEARNERS = {
    "knn": _Learner(knn.fit_state, knn.proba, knn.value, knn.predict_index),
    "decision_tree": _Learner(trees.fit_tree_state, trees.proba, trees.value),
    "random_forest": _Learner(
        lambda X, y, t, c, p, s: trees.fit_forest_state(X, y, t, c, p, s, "best"), trees.proba, trees.value
    ),
    "extra_trees": _Learner(
        lambda X, y, t, c, p, s: trees.fit_forest_state(X, y, t, c, p, s, "random"), trees.proba, trees.value
    ),
    "gbt": _Learner(boosting.fit_state, boosting.proba, boosting.value),
    "logistic_regression": _Learner(linear.fit_logistic_state, linear.logistic_proba),
    "linear_regression": _Learner(linear.fit_linear_state, None, linear.linear_value),
    "dummy": _Learner(dummy.fit_state, dummy.proba, dummy.value, dummy.predict_index),
}


def _matrix(X, feature_names=None) -> tuple[np.ndarray, tuple[str, ...] | None]:
    names = None
    if hasattr(X, "feature_names") and hasattr(X, "X"):
        names = tuple(X.feature_names)
        X = X.X
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise BadValue(0, "<features>", "feature matrix must be 2-D")
    if feature_names is not None:
        names = tuple(feature_names)
    return X, names


def _check_finite(X: np.ndarray, names) -> None:
    bad = ~np.isfinite(X)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        col = names[c] if names is not None and c < len(names) else f"x{c}"
        raise BadValue(int(r) + 1, col, "non-finite feature value")


def fit(spec: ModelSpec, X, y, feature_names: Sequence[str] | None = None) -> TrainedModel:
    """Fit ``spec`` on ``X`` / ``y``; deterministic given ``spec.seed``."""
    spec = spec.resolved()
    X, names = _matrix(X, feature_names)
    names = names or tuple(f"x{i}" for i in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise FeatureContractMismatch(f"{len(names)} feature names for {X.shape[1]} columns")
    y = np.asarray(y)
    if y.shape[0] != X.shape[0]:
        raise BadValue(0, "<labels>", f"{y.shape[0]} labels for {X.shape[0]} rows")
    if X.shape[0] == 0:
        raise BadValue(0, "<features>", "no training rows")
    _check_finite(X, names)
    if spec.kind == "voting":
        members = [(m["scaler"], ModelSpec.from_dict(m["model"]) if isinstance(m["model"], dict) else m["model"])
                   for m in (_member_entry(m) for m in spec.params["members"])]
        return voting_fit(members, X, y, spec.params["vote_mode"], names, spec.task, spec.seed)
    learner = _LEARNERS[spec.kind]
    if spec.task == "classification":
        classes = tuple(canonical_order(y.tolist()))
        index = {c: i for i, c in enumerate(classes)}
        yi = np.array([index[v] for v in y.tolist()], dtype=np.int64)
        state = learner.fit_state(X, yi, spec.task, len(classes), spec.params, spec.seed)
        return TrainedModel(spec, state, classes, names)
    yv = y.astype(np.float64)
    if not np.all(np.isfinite(yv)):
        raise BadValue(0, "<labels>", "regression labels must be finite")
    state = learner.fit_state(X, yv, spec.task, 0, spec.params, spec.seed)
    return TrainedModel(spec, state, None, names)


def _member_entry(m):
    if isinstance(m, dict):
        return {"scaler": m.get("scaler", "none"), "model": m["model"]}
    scaler, model = m
    return {"scaler": scaler, "model": model}


def _rows(model: TrainedModel, X, feature_names=None) -> np.ndarray:
    if not isinstance(model, TrainedModel) or model.state is None:
        raise NotFitted("model has not been fitted")
    X, names = _matrix(X, feature_names)
    if names is not None and tuple(names) != model.feature_names:
        raise FeatureContractMismatch(
            f"feature names/order differ from the training contract ({len(names)} vs {model.n_features} columns)"
        )
    if X.shape[1] != model.n_features:
        raise FeatureContractMismatch(f"expected {model.n_features} features, got {X.shape[1]}")
    _check_finite(X, names or model.feature_names)
    return X


def predict_proba(model: TrainedModel, X, feature_names=None) -> np.ndarray:
    """Class probabilities, columns in ``model.classes`` order; rows sum to 1."""
    X = _rows(model, X, feature_names)
    if model.task != "classification":
        raise BadValue(0, "<model>", "predict_proba needs a classification model")
    if model.spec.kind == "voting":
        return _voting_proba(model, X)
    P = _LEARNERS[model.spec.kind].proba(model.state, model.spec.params, X, len(model.classes))
    return P / P.sum(axis=1, keepdims=True)


def _predict_index(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    if model.spec.kind == "voting":
        return _voting_index(model, X)
    learner = _LEARNERS[model.spec.kind]
    if learner.predict_index is not None:
        return learner.predict_index(model.state, model.spec.params, X, len(model.classes))
    P = learner.proba(model.state, model.spec.params, X, len(model.classes))
    return np.argmax(P, axis=1)


def predict(model: TrainedModel, X, feature_names=None) -> np.ndarray:
    """Labels for classification models, values for regression models."""
    X = _rows(model, X, feature_names)
    if model.task == "regression":
        return _value(model, X)
    idx = _predict_index(model, X)
    out = np.empty(len(idx), dtype=object)
    out[:] = [model.classes[i] for i in idx]
    return out


def predict_value(model: TrainedModel, X, feature_names=None) -> np.ndarray:
    X = _rows(model, X, feature_names)
    if model.task != "regression":
        raise BadValue(0, "<model>", "predict_value needs a regression model")
    return _value(model, X)


def _value(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    if model.spec.kind == "voting":
        outs = [_value(m, _scale(s, X)) for s, m in model.state["members"]]
        return np.mean(outs, axis=0)
    return np.asarray(_LEARNERS[model.spec.kind].value(model.state, model.spec.params, X), dtype=np.float64)


def feature_importances(model: TrainedModel) -> np.ndarray:
    """Normalized split-gain importances of tree-based models."""
    imp = model.state.get("importance") if isinstance(model.state, dict) else None
    if imp is None:
        raise BadValue(0, "<model>", f"{model.spec.kind} has no feature importances")
    imp = np.asarray(imp, dtype=np.float64)
    s = imp.sum()
    return imp / s if s > 0 else imp


# ---------------------------------------------------------------- voting


def _scale(scaler, X):
    from rockmass.preprocess import apply_scaler

    return apply_scaler(scaler, X)


def voting_fit(
    members,
    X=None,
    y=None,
    vote_mode: str = "soft",
    feature_names=None,
    task: str | None = None,
    seed: int = 0,
) -> TrainedModel:
    """Combine scaler + model pipelines into one voting model.

    ``members`` is either a list of ``(scaler_kind, ModelSpec)`` pairs, which
    are fitted here on ``X`` / ``y`` (member ``i`` gets a seed derived from
    ``seed`` and ``i`` unless its spec sets one), or a list of already
    fitted ``(Scaler, TrainedModel)`` pairs.
    """
    from rockmass.preprocess import Scaler, fit_scaler

    members = list(members)
    if len(members) < 2:
        raise EmptyEnsemble(f"a voting model needs at least 2 members, got {len(members)}")
    fitted = all(isinstance(m, TrainedModel) for _, m in members)
    if not fitted:
        if X is None or y is None:
            raise EmptyEnsemble("unfitted members need training data")
        X, names = _matrix(X, feature_names)
        names = names or tuple(f"x{i}" for i in range(X.shape[1]))
        out = []
        for i, (scaler_kind, spec) in enumerate(members):
            if not isinstance(spec, ModelSpec):
                spec = ModelSpec.from_dict(spec)
            if task is not None and spec.task != task:
                spec = ModelSpec(spec.kind, task, spec.params, spec.seed)
            if spec.seed == 0:
                spec = ModelSpec(spec.kind, spec.task, spec.params, derive_seed(seed, i))
            scaler = fit_scaler(X, scaler_kind) if not isinstance(scaler_kind, Scaler) else scaler_kind
            out.append((scaler, fit(spec, _scale(scaler, X), y, names)))
        members = out
    tasks = {m.task for _, m in members}
    if len(tasks) != 1:
        raise HeterogeneousRoster(f"members mix tasks {sorted(tasks)}")
    member_task = tasks.pop()
    rosters = {m.classes for _, m in members}
    if len(rosters) != 1:
        raise HeterogeneousRoster("members were trained on different class rosters")
    contracts = {m.feature_names for _, m in members}
    if len(contracts) != 1:
        raise HeterogeneousRoster("members were trained on different feature contracts")
    classes = rosters.pop()
    if vote_mode == "auto":
        vote_mode = "soft" if member_task == "classification" else "average"
    spec = ModelSpec(
        "voting",
        member_task,
        {
            "members": [{"scaler": s.kind, "model": m.spec.to_dict()} for s, m in members],
            "vote_mode": vote_mode,
        },
        seed,
    ).resolved()
    return TrainedModel(spec, {"members": members}, classes, contracts.pop())


def _voting_proba(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    members = model.state["members"]
    if model.spec.params["vote_mode"] == "hard":
        C = len(model.classes)
        P = np.zeros((X.shape[0], C))
        for s, m in members:
            P[np.arange(X.shape[0]), _predict_index(m, _scale(s, X))] += 1.0
        return P / len(members)
    return np.mean([predict_proba(m, _scale(s, X)) for s, m in members], axis=0)


def _voting_index(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    # plurality (hard) or mean probability (soft); np.argmax picks the lowest
    # class index, i.e. the canonically first class, on ties
    return np.argmax(_voting_proba(model, X), axis=1)
