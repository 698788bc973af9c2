"""Learner zoo with one fit / predict / serialize contract."""

from rockmass.models.api import (
    feature_importances,
    fit,
    predict,
    predict_proba,
    predict_value,
    voting_fit,
)
from rockmass.models.base import MODEL_KINDS, PARAMS, ModelSpec, TrainedModel, derive_seed, model_kind
from rockmass.models.serialization import SCHEMA_VERSION, deserialize_model, serialize_model

__all__ = [
    "MODEL_KINDS",
    "PARAMS",
    "SCHEMA_VERSION",
    "ModelSpec",
    "TrainedModel",
    "derive_seed",
    "deserialize_model",
    "feature_importances",
    "fit",
    "model_kind",
    "predict",
    "predict_proba",
    "predict_value",
    "serialize_model",
    "voting_fit",
]
