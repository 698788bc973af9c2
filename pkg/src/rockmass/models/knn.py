"""k-nearest neighbours (brute force, exact)."""

from __future__ import annotations

import numpy as np

from rockmass.models._kernels import knn_query


def fit_state(X, y, task, n_classes, params, seed):
    # lazy learner: the state is the training set itself
    return {"X": np.ascontiguousarray(X, dtype=np.float64), "y": np.asarray(y).copy()}


def neighbours(state, params, X):
    train = state["X"]
    k = min(params["k"], train.shape[0])
    return knn_query(train, np.ascontiguousarray(X, dtype=np.float64), k, params["distance_metric"] == "manhattan")


def _weights(dist: np.ndarray, mode: str) -> np.ndarray:
    if mode == "uniform":
        return np.ones_like(dist)
    w = np.zeros_like(dist)
    exact = dist == 0
    hit = exact.any(axis=1)
    # an exact match outvotes everything: only zero-distance neighbours count
    w[hit] = exact[hit].astype(np.float64)
    with np.errstate(divide="ignore"):
        w[~hit] = 1.0 / dist[~hit]
    return w


def _votes(state, params, X, n_classes):
    dist, ind = neighbours(state, params, X)
    labels = state["y"][ind]
    w = _weights(dist, params["weights"])
    votes = np.zeros((X.shape[0], n_classes))
    summed = np.zeros((X.shape[0], n_classes))
    rows = np.repeat(np.arange(X.shape[0]), ind.shape[1])
    np.add.at(votes, (rows, labels.ravel()), w.ravel())
    np.add.at(summed, (rows, labels.ravel()), dist.ravel())
    return votes, summed


def proba(state, params, X, n_classes):
    votes, _ = _votes(state, params, X, n_classes)
    return votes / votes.sum(axis=1, keepdims=True)


def predict_index(state, params, X, n_classes):
    """Majority vote; ties go to the smaller summed neighbour distance, then lower class index."""
    votes, summed = _votes(state, params, X, n_classes)
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        top = votes[i].max()
        tied = np.flatnonzero(np.isclose(votes[i], top, rtol=1e-12, atol=0.0))
        if tied.size == 1:
            out[i] = tied[0]
        else:
            d = summed[i, tied]
            out[i] = tied[np.flatnonzero(d == d.min())[0]]
    return out


def value(state, params, X):
    dist, ind = neighbours(state, params, X)
    w = _weights(dist, params["weights"])
    return (w * state["y"][ind]).sum(axis=1) / w.sum(axis=1)
