"""Model configs, hyperparameter validation and the fitted-model record."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from rockmass.errors import BadHyperparameter

TASKS = ("classification", "regression")

# canonical kind -> accepted spellings (compared after lowercasing and dropping separators)
_KIND_ALIASES = {
    "knn": ("knn", "kneighbors", "kneighborsclassifier", "kneighborsregressor"),
    "decision_tree": ("decisiontree", "tree", "dt"),
    "random_forest": ("randomforest", "rf"),
    "extra_trees": ("extratrees", "et", "extremelyrandomizedtrees"),
    "gbt": ("gbt", "gradientboostedtrees", "gradientboosting", "gbdt"),
    "logistic_regression": ("logisticregression", "logistic", "logreg"),
    "linear_regression": ("linearregression", "linear", "ols"),
    "dummy": ("dummy", "baseline"),
    "voting": ("voting", "ensemble", "votingclassifier", "votingregressor"),
}
MODEL_KINDS = tuple(_KIND_ALIASES)


def model_kind(kind: str) -> str:
    key = str(kind).lower().replace("_", "").replace("-", "").replace(" ", "")
    for canon, names in _KIND_ALIASES.items():
        if key in names or key == canon.replace("_", ""):
            return canon
    raise BadHyperparameter(f"unknown model kind {kind!r}")


def task_name(task: str) -> str:
    t = str(task).lower()
    if t in ("classification", "classifier", "clf"):
        return "classification"
    if t in ("regression", "regressor", "reg"):
        return "regression"
    raise BadHyperparameter(f"unknown task {task!r}")


# ---------------------------------------------------------------- validators


def _int(lo: int, hi: float = math.inf, allow_none: bool = False) -> Callable:
    def check(name, v):
        if v is None and allow_none:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or not (lo <= v <= hi):
            raise BadHyperparameter(f"{name} must be an integer in [{lo}, {hi}], got {v!r}")
        return int(v)

    return check


def _real(lo: float, hi: float = math.inf, open_lo: bool = False) -> Callable:
    def check(name, v):
        if isinstance(v, bool) or not isinstance(v, (int, float, np.floating, np.integer)):
            raise BadHyperparameter(f"{name} must be a number, got {v!r}")
        v = float(v)
        if not math.isfinite(v) or v < lo or v > hi or (open_lo and v == lo):
            raise BadHyperparameter(f"{name}={v!r} outside {'(' if open_lo else '['}{lo}, {hi}]")
        return v

    return check


def _choice(*options) -> Callable:
    def check(name, v):
        if v not in options:
            raise BadHyperparameter(f"{name} must be one of {options}, got {v!r}")
        return v

    return check


def _max_features(name, v):
    if v is None or v in ("sqrt", "log2", "all"):
        return v
    if isinstance(v, bool):
        raise BadHyperparameter(f"{name} must be None, 'sqrt', 'log2', an int >= 1 or a fraction in (0, 1]")
    if isinstance(v, (int, np.integer)) and v >= 1:
        return int(v)
    if isinstance(v, float) and 0 < v <= 1:
        return v
    raise BadHyperparameter(f"{name} must be None, 'sqrt', 'log2', an int >= 1 or a fraction in (0, 1], got {v!r}")


def _lr(name, v):
    if v == "auto":
        return v
    return _real(0.0, math.inf, open_lo=True)(name, v)


def _members(name, v):
    if not isinstance(v, (list, tuple)):
        raise BadHyperparameter(f"{name} must be a list of member specs")
    return list(v)


_TREE_PARAMS = {
    "max_depth": (None, _int(1, allow_none=True)),
    "min_samples_split": (2, _int(2)),
    "min_samples_leaf": (1, _int(1)),
}

# kind -> param -> (default, validator); "auto" defaults are resolved per task
PARAMS: dict[str, dict[str, tuple[Any, Callable]]] = {
    "knn": {
        "k": (5, _int(1)),
        "distance_metric": ("manhattan", _choice("manhattan", "euclidean")),
        "weights": ("uniform", _choice("uniform", "distance")),
    },
    "decision_tree": {**_TREE_PARAMS, "max_features": (None, _max_features)},
    "random_forest": {
        **_TREE_PARAMS,
        "n_trees": (100, _int(1)),
        "max_features": ("auto", _max_features),
        "bootstrap": (True, _choice(True, False)),
    },
    "extra_trees": {
        **_TREE_PARAMS,
        "n_trees": (100, _int(1)),
        "max_features": ("auto", _max_features),
        "bootstrap": (False, _choice(True, False)),
    },
    "gbt": {
        "n_rounds": (100, _int(1)),
        "learning_rate": (0.1, _real(0.0, 1.0, open_lo=True)),
        "max_depth": (3, _int(1)),
        "min_samples_leaf": (1, _int(1)),
        "subsample": (1.0, _real(0.0, 1.0, open_lo=True)),
        "max_features": (None, _max_features),
        "splitter": ("exact", _choice("exact", "hist")),
    },
    "logistic_regression": {
        "l2": (1e-4, _real(0.0)),
        "learning_rate": ("auto", _lr),
        "max_iter": (1000, _int(1)),
        "tol": (1e-6, _real(0.0)),
    },
    "linear_regression": {"l2": (0.0, _real(0.0))},
    "dummy": {},
    "voting": {
        "members": ([], _members),
        "vote_mode": ("auto", _choice("auto", "hard", "soft", "average")),
    },
}

_TASKS_FOR_KIND = {
    "logistic_regression": ("classification",),
    "linear_regression": ("regression",),
}


def resolve_params(kind: str, task: str, params: Mapping | None) -> dict:
    """Validate ``params`` against ``kind`` and fill defaults."""
    kind = model_kind(kind)
    task = task_name(task)
    if task not in _TASKS_FOR_KIND.get(kind, TASKS):
        raise BadHyperparameter(f"{kind} does not support {task}")
    table = PARAMS[kind]
    params = dict(params or {})
    unknown = sorted(set(params) - set(table))
    if unknown:
        raise BadHyperparameter(f"unknown hyperparameter(s) for {kind}: {unknown}")
    out = {}
    for name, (default, check) in table.items():
        out[name] = check(name, params[name]) if name in params else default
    if kind in ("random_forest", "extra_trees") and out["max_features"] == "auto":
        out["max_features"] = "sqrt" if task == "classification" else None
    if kind == "voting":
        if out["vote_mode"] == "auto":
            out["vote_mode"] = "soft" if task == "classification" else "average"
        if (task == "regression") != (out["vote_mode"] == "average"):
            raise BadHyperparameter(f"vote_mode {out['vote_mode']!r} does not fit task {task}")
    return out


@dataclass(frozen=True)
class ModelSpec:
    """Declarative learner configuration."""

    kind: str
    task: str = "classification"
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def resolved(self) -> "ModelSpec":
        kind = model_kind(self.kind)
        task = task_name(self.task)
        return ModelSpec(kind, task, resolve_params(kind, task, self.params), int(self.seed))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "task": self.task, "params": _plain(dict(self.params)), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        return cls(d["kind"], d.get("task", "classification"), dict(d.get("params", {})), int(d.get("seed", 0)))


def _plain(obj):
    if isinstance(obj, ModelSpec):
        return obj.to_dict()
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """A fitted learner: resolved spec, state arrays, class roster and feature contract."""

    spec: ModelSpec
    state: Mapping[str, Any]
    classes: tuple | None
    feature_names: tuple[str, ...]

    @property
    def task(self) -> str:
        return self.spec.task

    @property
    def n_features(self) -> int:
        return len(self.feature_names)


def derive_seed(master: int, index: int) -> int:
    """Seed of sub-task ``index`` (tree, member, fold) under ``master``."""
    return int(np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, int(index)]).generate_state(1, np.uint64)[0] >> np.uint64(1))


def n_threads() -> int:
    """Worker count from ``ROCKMASS_THREADS`` (default 1)."""
    raw = os.environ.get("ROCKMASS_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise BadHyperparameter(f"ROCKMASS_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)
