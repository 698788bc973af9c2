"""Seeded hyperparameter search and trial-history export.

Two samplers share one search loop. ``random`` draws every configuration
from the declared domains. ``tpe_lite`` does the same for ten warm-up
trials, then draws 24 candidates per trial and keeps the one whose
Parzen-density ratio (top quarter of finished trials vs the rest) is
largest. The first trial always evaluates the default configuration.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from rockmass.errors import BadHyperparameter, EvaluatorFailure, RockmassError

WARMUP = 10
N_CANDIDATES = 24
TOP_FRACTION = 0.25


@dataclass(frozen=True)
class IntRange:
    low: int
    high: int
    log: bool = False

    def __post_init__(self):
        if self.low > self.high or (self.log and self.low < 1):
            raise BadHyperparameter(f"invalid integer range [{self.low}, {self.high}]")

    def sample(self, rng):
        if self.log:
            v = math.exp(rng.uniform(math.log(self.low), math.log(self.high + 1)))
            return int(min(self.high, max(self.low, math.floor(v))))
        return int(rng.integers(self.low, self.high + 1))

    def contains(self, v) -> bool:
        return isinstance(v, (int, np.integer)) and self.low <= v <= self.high

    def unit(self, v) -> float:
        if self.high == self.low:
            return 0.5
        if self.log:
            return (math.log(v) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        return (v - self.low) / (self.high - self.low)

    def describe(self) -> dict:
        return {"type": "int", "low": self.low, "high": self.high, "log": self.log}


@dataclass(frozen=True)
class FloatRange:
    low: float
    high: float
    log: bool = False

    def __post_init__(self):
        if not self.low <= self.high or (self.log and self.low <= 0):
            raise BadHyperparameter(f"invalid real range [{self.low}, {self.high}]")

    def sample(self, rng):
        if self.log:
            return float(math.exp(rng.uniform(math.log(self.low), math.log(self.high))))
        return float(rng.uniform(self.low, self.high))

    def contains(self, v) -> bool:
        return isinstance(v, (int, float)) and self.low <= v <= self.high

    def unit(self, v) -> float:
        if self.high == self.low:
            return 0.5
        if self.log:
            return (math.log(v) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        return (v - self.low) / (self.high - self.low)

    def describe(self) -> dict:
        return {"type": "float", "low": self.low, "high": self.high, "log": self.log}


@dataclass(frozen=True)
class Categorical:
    choices: tuple

    def __post_init__(self):
        if len(self.choices) == 0:
            raise BadHyperparameter("categorical domain needs at least one choice")

    def sample(self, rng):
        return self.choices[int(rng.integers(len(self.choices)))]

    def contains(self, v) -> bool:
        return v in self.choices

    def describe(self) -> dict:
        return {"type": "categorical", "choices": list(self.choices)}


@dataclass(frozen=True)
class SearchSpace:
    domains: Mapping[str, Any]
    defaults: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for name, v in self.defaults.items():
            if name not in self.domains:
                raise BadHyperparameter(f"default for undeclared parameter {name!r}")
            if not self.domains[name].contains(v):
                raise BadHyperparameter(f"default {name}={v!r} outside its domain")

    @property
    def names(self) -> list[str]:
        return sorted(self.domains)

    def sample(self, rng) -> dict:
        return {name: self.domains[name].sample(rng) for name in self.names}

    def default(self) -> dict:
        return {name: self.defaults[name] for name in self.names if name in self.defaults}

    def contains(self, config: Mapping) -> bool:
        return all(name in self.domains and self.domains[name].contains(v) for name, v in config.items())


@dataclass
class Trial:
    index: int
    params: dict
    value: float | None = None
    fold_values: list = field(default_factory=list)
    status: str = "ok"
    duration_s: float = 0.0
    error: str = ""


# ---------------------------------------------------------------- tpe_lite


def _kde_logpdf(x: float, points: Sequence[float], bandwidth: float) -> float:
    # Parzen estimate on [0, 1] mixed with the uniform prior (one pseudo-point)
    pts = np.asarray(points, dtype=np.float64)
    dens = np.exp(-0.5 * ((x - pts) / bandwidth) ** 2) / (bandwidth * math.sqrt(2 * math.pi))
    return math.log((dens.sum() + 1.0) / (len(pts) + 1.0))


def _cat_logpmf(x, values: Sequence, choices: Sequence) -> float:
    count = sum(1 for v in values if v == x)
    return math.log((count + 1.0) / (len(values) + len(choices)))


def _tpe_score(space: SearchSpace, cand: dict, good: list[dict], bad: list[dict]) -> float:
    score = 0.0
    for name in space.names:
        dom = space.domains[name]
        if isinstance(dom, Categorical):
            score += _cat_logpmf(cand[name], [g[name] for g in good], dom.choices)
            score -= _cat_logpmf(cand[name], [b[name] for b in bad], dom.choices)
        else:
            x = dom.unit(cand[name])
            gp = [dom.unit(g[name]) for g in good]
            bp = [dom.unit(b[name]) for b in bad]
            hg = max(0.1, 1.06 * len(gp) ** -0.2 * (np.std(gp) if len(gp) > 1 else 1.0))
            hb = max(0.1, 1.06 * len(bp) ** -0.2 * (np.std(bp) if len(bp) > 1 else 1.0))
            score += _kde_logpdf(x, gp, hg) - _kde_logpdf(x, bp, hb)
    return score


def _tpe_propose(space: SearchSpace, history: list[Trial], rng) -> dict:
    cands = [space.sample(rng) for _ in range(N_CANDIDATES)]
    done = sorted((t for t in history if t.status == "ok"), key=lambda t: (-t.value, t.index))
    if len(done) < 2:
        return cands[0]
    n_good = max(1, int(math.ceil(TOP_FRACTION * len(done))))
    good = [t.params for t in done[:n_good]]
    bad = [t.params for t in done[n_good:]] or good
    scores = [_tpe_score(space, c, good, bad) for c in cands]
    return cands[int(np.argmax(scores))]


# ---------------------------------------------------------------- search loop


def search(
    space: SearchSpace,
    evaluator: Callable[[dict], Any],
    n_trials: int,
    sampler: str = "tpe_lite",
    seed: int = 0,
    objective: str = "balanced_accuracy",
) -> tuple[Trial | None, list[Trial]]:
    """Maximize ``evaluator(config)`` over ``space``.

    ``evaluator`` returns the objective value or ``(value, per_fold_values)``.
    ``EvaluatorFailure`` (and any other package error) marks the trial as
    failed and the search moves on. Minimized quantities should be negated
    by the evaluator. Returns ``(best_trial, history)``; best is ``None``
    only if every trial failed.
    """
    if n_trials < 1:
        raise BadHyperparameter("n_trials must be >= 1")
    if sampler not in ("random", "tpe_lite"):
        raise BadHyperparameter(f"unknown sampler {sampler!r}")
    rng = np.random.default_rng(seed)
    history: list[Trial] = []
    for i in range(n_trials):
        if i == 0:
            # fill parameters without a declared default from the prior
            params = {**space.sample(rng), **space.default()}
        elif sampler == "random" or sum(t.status == "ok" for t in history) < WARMUP:
            params = space.sample(rng)
        else:
            params = _tpe_propose(space, history, rng)
        trial = Trial(i, params)
        t0 = time.perf_counter()
        try:
            out = evaluator(dict(params))
            value, folds = (out if isinstance(out, tuple) else (out, []))
            value = float(value)
            if not math.isfinite(value):
                raise EvaluatorFailure(f"trial {i} returned non-finite objective {value!r}")
            trial.value = value
            trial.fold_values = [float(v) for v in folds]
        except (RockmassError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            trial.status = "failed"
            trial.error = f"{type(exc).__name__}: {exc}"
        trial.duration_s = time.perf_counter() - t0
        history.append(trial)
    ok = [t for t in history if t.status == "ok"]
    best = max(ok, key=lambda t: (t.value, -t.index)) if ok else None
    return best, history


# ---------------------------------------------------------------- export


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def history_csv(history: Sequence[Trial], space: SearchSpace | None = None) -> str:
    names = space.names if space is not None else sorted({k for t in history for k in t.params})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial", "status"] + names + ["objective"])
    for t in sorted(history, key=lambda t: t.index):
        w.writerow([t.index, t.status] + [_cell(t.params.get(n)) for n in names] + [_cell(t.value)])
    return buf.getvalue()


def parallel_coordinates(history: Sequence[Trial], space: SearchSpace, objective: str = "objective") -> dict:
    return {
        "objective": objective,
        "axes": [{"name": n, **space.domains[n].describe()} for n in space.names],
        "trials": [
            {"trial": t.index, "status": t.status, "params": {n: t.params.get(n) for n in space.names}, "objective": t.value}
            for t in sorted(history, key=lambda t: t.index)
        ],
        "default_trial": 0,
    }


def export_history(history: Sequence[Trial], space: SearchSpace, directory, objective: str = "objective") -> tuple[Path, Path]:
    """Write ``trials.csv`` and ``parallel_coordinates.json`` (no timings, so reruns match byte for byte)."""
    if not history:
        raise ValueError("empty history")
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "trials.csv"
    json_path = out / "parallel_coordinates.json"
    csv_path.write_text(history_csv(history, space), encoding="utf-8")
    json_path.write_text(json.dumps(parallel_coordinates(history, space, objective), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, json_path


# ---------------------------------------------------------------- learner spaces

_SPACES: dict[str, tuple[dict, dict]] = {
    "knn": (
        {
            "k": IntRange(1, 50, log=True),
            "distance_metric": Categorical(("manhattan", "euclidean")),
            "weights": Categorical(("uniform", "distance")),
        },
        {"k": 5, "distance_metric": "manhattan", "weights": "uniform"},
    ),
    "decision_tree": (
        {"max_depth": Categorical((None, 4, 8, 16, 32)), "min_samples_leaf": IntRange(1, 20)},
        {"max_depth": None, "min_samples_leaf": 1},
    ),
    "random_forest": (
        {
            "n_trees": IntRange(20, 300, log=True),
            "min_samples_leaf": IntRange(1, 10),
            "max_features": Categorical(("sqrt", "log2", 0.5)),
        },
        {"n_trees": 100, "min_samples_leaf": 1, "max_features": "sqrt"},
    ),
    "extra_trees": (
        {
            "n_trees": IntRange(20, 300, log=True),
            "min_samples_leaf": IntRange(1, 10),
            "max_features": Categorical(("sqrt", "log2", 0.5)),
        },
        {"n_trees": 100, "min_samples_leaf": 1, "max_features": "sqrt"},
    ),
    "gbt": (
        {
            "n_rounds": IntRange(20, 300, log=True),
            "learning_rate": FloatRange(0.01, 0.5, log=True),
            "max_depth": IntRange(2, 6),
        },
        {"n_rounds": 100, "learning_rate": 0.1, "max_depth": 3},
    ),
    "logistic_regression": ({"l2": FloatRange(1e-6, 1.0, log=True)}, {"l2": 1e-4}),
    "linear_regression": ({"l2": FloatRange(1e-8, 10.0, log=True)}, {"l2": 1e-8}),
    "dummy": ({}, {}),
}


def learner_space(kind: str, prefix: str = "") -> SearchSpace:
    """Documented default search space for one learner kind."""
    from rockmass.models import model_kind

    doms, defs = _SPACES[model_kind(kind)]
    return SearchSpace({prefix + k: v for k, v in doms.items()}, {prefix + k: v for k, v in defs.items()})


def pipeline_space(model_spec, scaler_choices: Sequence[str] = ("minmax", "standard"), default_scaler: str = "minmax") -> SearchSpace:
    """Space over the pipeline scaler plus the model's parameters.

    Voting members are addressed as ``m<i>.<param>``.
    """
    from rockmass.models import model_kind

    kind = model_kind(model_spec.kind)
    doms: dict = {}
    defs: dict = {}
    if scaler_choices:
        doms["scaler"] = Categorical(tuple(scaler_choices))
        defs["scaler"] = default_scaler
    if kind == "voting":
        for i, m in enumerate(model_spec.params.get("members", [])):
            sub = learner_space(m["model"]["kind"], f"m{i}.")
            doms.update(sub.domains)
            defs.update(sub.defaults)
    else:
        sub = learner_space(kind)
        doms.update(sub.domains)
        defs.update(sub.defaults)
    return SearchSpace(doms, defs)


def apply_config(pipeline, config: Mapping):
    """Pipeline with ``config`` written into its scaler / model parameters."""
    from rockmass.models import ModelSpec
    from rockmass.pipeline import Pipeline

    d = pipeline.to_dict()
    model = dict(d["model"])
    params = dict(model.get("params", {}))
    for key, v in config.items():
        if key == "scaler":
            d["scaler"] = v
        elif key.startswith("m") and "." in key:
            i, name = key[1:].split(".", 1)
            members = [dict(m) for m in params["members"]]
            mm = dict(members[int(i)])
            mdl = dict(mm["model"])
            mdl["params"] = {**mdl.get("params", {}), name: v}
            mm["model"] = mdl
            members[int(i)] = mm
            params["members"] = members
        else:
            params[key] = v
    model["params"] = params
    d["model"] = ModelSpec.from_dict(model)
    return Pipeline.from_dict(d)
