"""Versioned JSON documents for fitted models.

Layout: ``{"schema_version": 1, "spec": {...}, "state": {...}}``. Arrays are
stored as ``{"__ndarray__": dtype, "shape": [...], "data": [...]}``; floats
go through ``repr`` so a round trip is bit-exact. The class roster and the
feature contract travel inside ``state``.
"""

from __future__ import annotations

import json
import math

import numpy as np

from rockmass.errors import CorruptDocument, VersionMismatch
from rockmass.models.base import ModelSpec, TrainedModel

SCHEMA_VERSION = 1


def _enc(obj, feature_names=None):
    if isinstance(obj, np.ndarray):
        data = obj.ravel().tolist()
        if obj.dtype.kind == "f":
            data = [_enc_float(v) for v in data]
        return {"__ndarray__": obj.dtype.str.lstrip("<>|="), "shape": list(obj.shape), "data": data}
    if isinstance(obj, dict):
        out = {str(k): _enc(v, feature_names) for k, v in obj.items()}
        if feature_names is not None and {"feature", "threshold", "left", "right"} <= obj.keys():
            # readable split names alongside the indices; ignored on load
            out["split_feature"] = [feature_names[f] if f >= 0 else None for f in obj["feature"].tolist()]
        return out
    if isinstance(obj, (list, tuple)):
        return [_enc(v, feature_names) for v in obj]
    if isinstance(obj, TrainedModel):
        return _model_doc(obj)
    if isinstance(obj, np.generic):
        return _enc(obj.item())
    if isinstance(obj, float):
        return _enc_float(obj)
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return obj


def _enc_float(v: float):
    if math.isfinite(v):
        return v
    return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")


def _dec_float(v):
    if isinstance(v, str):
        return float(v)
    return v


def _dec(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            dtype = np.dtype(obj["__ndarray__"])
            data = obj["data"]
            if dtype.kind == "f":
                data = [_dec_float(v) for v in data]
            return np.asarray(data, dtype=dtype).reshape(obj["shape"])
        return {k: _dec(v) for k, v in obj.items() if k != "split_feature"}
    if isinstance(obj, list):
        return [_dec(v) for v in obj]
    return obj


def _model_doc(model: TrainedModel) -> dict:
    if model.spec.kind == "voting":
        state = {
            "members": [{"scaler": s.to_dict(), "model": _model_doc(m)} for s, m in model.state["members"]]
        }
    else:
        state = _enc(dict(model.state), model.feature_names)
    state["classes"] = None if model.classes is None else list(model.classes)
    state["feature_names"] = list(model.feature_names)
    return {"schema_version": SCHEMA_VERSION, "spec": model.spec.to_dict(), "state": state}


def _model_from_doc(doc) -> TrainedModel:
    from rockmass.preprocess import Scaler

    if not isinstance(doc, dict) or not {"schema_version", "spec", "state"} <= doc.keys():
        raise CorruptDocument("model document lacks schema_version / spec / state")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise VersionMismatch(f"model schema version {doc['schema_version']!r}, this build reads {SCHEMA_VERSION}")
    try:
        spec = ModelSpec.from_dict(doc["spec"]).resolved()
        raw = dict(doc["state"])
        classes = raw.pop("classes")
        names = tuple(raw.pop("feature_names"))
        if spec.kind == "voting":
            state = {
                "members": [(Scaler.from_dict(m["scaler"]), _model_from_doc(m["model"])) for m in raw["members"]]
            }
        else:
            state = _dec(raw)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, (VersionMismatch, CorruptDocument)):
            raise
        raise CorruptDocument(f"malformed model document: {exc}") from None
    return TrainedModel(spec, state, None if classes is None else tuple(classes), names)


def serialize_model(model: TrainedModel) -> bytes:
    doc = _model_doc(model)
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def deserialize_model(data: bytes | str) -> TrainedModel:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptDocument(f"not a JSON model document: {exc}") from None
    return _model_from_doc(doc)
