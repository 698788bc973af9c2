"""Leakage-safe training pipeline: outlier mask -> scaler -> balancer -> model.

Every step is fitted on the training rows only; prediction applies the
fitted scaler and model and never refits anything.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from rockmass.errors import (
    BadHyperparameter,
    CorruptDocument,
    FeatureContractMismatch,
    NotFitted,
    UnknownKind,
    VersionMismatch,
)
from rockmass.models import ModelSpec, TrainedModel, derive_seed, fit, predict, predict_proba, predict_value
from rockmass.models.serialization import SCHEMA_VERSION, _model_doc, _model_from_doc, serialize_model
from rockmass.preprocess import (
    Scaler,
    apply_scaler,
    fit_scaler,
    isolation_forest_mask,
    mad_outlier_mask,
    regression_resample,
    scaler_kind,
    smote_oversample,
)

OUTLIER_KINDS = ("none", "mad", "isolation_forest", "both")
BALANCE_KINDS = ("none", "smote", "resample")

_OUTLIER_DEFAULTS = {"threshold": 3.5, "trees": 100, "subsample": 256, "contamination": 0.05}
_BALANCE_DEFAULTS = {"k_neighbors": 5, "n_bins": 10, "per_bin_target": 1000}


def outlier_config(value) -> dict:
    """Normalize ``"mad"`` / ``{"kind": "mad", "threshold": 3.0}`` style specs."""
    if value is None:
        value = "none"
    if isinstance(value, str):
        value = {"kind": value}
    cfg = dict(value)
    kind = str(cfg.pop("kind", "none")).lower().replace("-", "_")
    kind = {"iforest": "isolation_forest", "isolationforest": "isolation_forest"}.get(kind, kind)
    if kind not in OUTLIER_KINDS:
        raise UnknownKind(f"unknown outlier method {kind!r}")
    unknown = set(cfg) - set(_OUTLIER_DEFAULTS)
    if unknown:
        raise BadHyperparameter(f"unknown outlier option(s): {sorted(unknown)}")
    out = {"kind": kind, **_OUTLIER_DEFAULTS, **cfg}
    if not out["threshold"] > 0:
        raise BadHyperparameter("MAD threshold must be positive")
    return out


def balance_config(value) -> dict:
    if value is None:
        value = "none"
    if isinstance(value, str):
        value = {"kind": value}
    cfg = dict(value)
    kind = str(cfg.pop("kind", "none")).lower()
    if kind not in BALANCE_KINDS:
        raise UnknownKind(f"unknown balancing method {kind!r}")
    unknown = set(cfg) - set(_BALANCE_DEFAULTS)
    if unknown:
        raise BadHyperparameter(f"unknown balancing option(s): {sorted(unknown)}")
    return {"kind": kind, **_BALANCE_DEFAULTS, **cfg}


@dataclass(frozen=True)
class Pipeline:
    model: ModelSpec
    scaler: str = "minmax"
    outliers: Mapping[str, Any] = field(default_factory=lambda: {"kind": "none"})
    balance: Mapping[str, Any] = field(default_factory=lambda: {"kind": "none"})
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scaler", scaler_kind(self.scaler))
        object.__setattr__(self, "outliers", outlier_config(self.outliers))
        object.__setattr__(self, "balance", balance_config(self.balance))
        task = self.model.resolved().task
        if self.balance["kind"] == "smote" and task != "classification":
            raise BadHyperparameter("SMOTE balancing needs a classification model; use 'resample' for regression")
        if self.balance["kind"] == "resample" and task != "regression":
            raise BadHyperparameter("'resample' balancing is for regression models")

    @property
    def task(self) -> str:
        return self.model.resolved().task

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "scaler": self.scaler,
            "outliers": dict(self.outliers),
            "balance": dict(self.balance),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Pipeline":
        model = d["model"]
        return cls(
            model=model if isinstance(model, ModelSpec) else ModelSpec.from_dict(model),
            scaler=d.get("scaler", "minmax"),
            outliers=d.get("outliers", "none"),
            balance=d.get("balance", "none"),
            seed=int(d.get("seed", 0)),
        )


@dataclass(frozen=True, eq=False)
class FittedPipeline:
    pipeline: Pipeline
    scaler: Scaler
    model: TrainedModel
    kept: np.ndarray  # training rows surviving the outlier mask
    n_train_rows: int  # rows seen by the model after balancing

    @property
    def task(self) -> str:
        return self.model.task

    @property
    def classes(self):
        return self.model.classes

    def fingerprint(self) -> str:
        """Hash over every fitted parameter (scaler, kept rows, model state)."""
        h = hashlib.sha256()
        h.update(json.dumps(self.scaler.to_dict(), sort_keys=True).encode())
        h.update(np.packbits(self.kept).tobytes())
        h.update(serialize_model(self.model))
        return h.hexdigest()


def outlier_mask(X: np.ndarray, cfg: Mapping, seed: int) -> np.ndarray:
    kind = cfg["kind"]
    keep = np.ones(X.shape[0], dtype=bool)
    if kind in ("mad", "both"):
        keep &= mad_outlier_mask(X, cfg["threshold"])
    if kind in ("isolation_forest", "both"):
        keep &= isolation_forest_mask(X, cfg["trees"], cfg["subsample"], cfg["contamination"], seed)
    return keep


def pipeline_fit(p: Pipeline, X, y, feature_names=None) -> FittedPipeline:
    names = None
    if hasattr(X, "feature_names") and hasattr(X, "X"):
        names = tuple(X.feature_names)
        X = X.X
    if feature_names is not None:
        names = tuple(feature_names)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    keep = outlier_mask(X, p.outliers, derive_seed(p.seed, 1))
    Xk, yk = X[keep], y[keep]
    scaler = fit_scaler(Xk, p.scaler)
    Xs = apply_scaler(scaler, Xk)
    b = p.balance
    if b["kind"] == "smote":
        Xs, yk = smote_oversample(Xs, yk, b["k_neighbors"], seed=derive_seed(p.seed, 2))
    elif b["kind"] == "resample":
        Xs, yk = regression_resample(
            Xs, yk.astype(np.float64), b["n_bins"], b["per_bin_target"], b["k_neighbors"], seed=derive_seed(p.seed, 2)
        )
    model = fit(p.model, Xs, yk, names)
    return FittedPipeline(p, scaler, model, keep, int(Xs.shape[0]))


def _transform(fp, X) -> tuple[np.ndarray, tuple | None]:
    if not isinstance(fp, FittedPipeline):
        raise NotFitted("pipeline has not been fitted")
    names = None
    if hasattr(X, "feature_names") and hasattr(X, "X"):
        names = tuple(X.feature_names)
        X = X.X
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(fp.scaler.offset):
        raise FeatureContractMismatch(
            f"pipeline was fitted on {len(fp.scaler.offset)} features, got shape {X.shape}"
        )
    return apply_scaler(fp.scaler, X), names


def pipeline_predict(fp: FittedPipeline, X, feature_names=None) -> np.ndarray:
    Xs, names = _transform(fp, X)
    return predict(fp.model, Xs, feature_names or names)


def pipeline_predict_proba(fp: FittedPipeline, X, feature_names=None) -> np.ndarray:
    Xs, names = _transform(fp, X)
    return predict_proba(fp.model, Xs, feature_names or names)


def pipeline_predict_value(fp: FittedPipeline, X, feature_names=None) -> np.ndarray:
    Xs, names = _transform(fp, X)
    return predict_value(fp.model, Xs, feature_names or names)


def serialize_pipeline(fp: FittedPipeline) -> bytes:
    """JSON document with the pipeline description, fitted scaler and model."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "pipeline": fp.pipeline.to_dict(),
        "scaler": fp.scaler.to_dict(),
        "model": _model_doc(fp.model),
        "n_rows": int(len(fp.kept)),
        "dropped_rows": np.flatnonzero(~fp.kept).tolist(),
        "n_train_rows": fp.n_train_rows,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def deserialize_pipeline(data: bytes | str) -> FittedPipeline:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptDocument(f"not a JSON pipeline document: {exc}") from None
    if not isinstance(doc, dict) or "pipeline" not in doc:
        raise CorruptDocument("pipeline document lacks the 'pipeline' entry")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise VersionMismatch(f"pipeline schema version {doc.get('schema_version')!r}, this build reads {SCHEMA_VERSION}")
    try:
        kept = np.ones(int(doc["n_rows"]), dtype=bool)
        kept[np.asarray(doc["dropped_rows"], dtype=np.int64)] = False
        return FittedPipeline(
            Pipeline.from_dict(doc["pipeline"]),
            Scaler.from_dict(doc["scaler"]),
            _model_from_doc(doc["model"]),
            kept,
            int(doc["n_train_rows"]),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        if isinstance(exc, (VersionMismatch, CorruptDocument)):
            raise
        raise CorruptDocument(f"malformed pipeline document: {exc}") from None
