"""CART decision trees, random forests and extremely randomized trees."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from rockmass.models import _kernels as K
from rockmass.models.base import derive_seed, n_threads


def resolve_max_features(value, n_features: int) -> int:
    if value in (None, "all"):
        return n_features
    if value == "sqrt":
        return max(1, int(math.sqrt(n_features)))
    if value == "log2":
        return max(1, int(math.log2(n_features)))
    if isinstance(value, float):
        return max(1, int(value * n_features))
    return min(int(value), n_features)


def target_matrix(y, task, n_classes) -> np.ndarray:
    if task == "classification":
        Y = np.zeros((len(y), n_classes))
        Y[np.arange(len(y)), y] = 1.0
        return Y
    return np.asarray(y, dtype=np.float64).reshape(-1, 1)


def presort(X: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))


def bin_features(X: np.ndarray, max_bins: int = 256):
    """Quantile cut points per feature for histogram splitting.

    Features with at most ``max_bins`` distinct values get a cut midway
    between every pair of neighbours, so histogram splits coincide with
    exact ones. Returns ``(bins, edges, n_edges)``.
    """
    X = np.asarray(X, dtype=np.float64)
    n, F = X.shape
    cuts = []
    for f in range(F):
        u = np.unique(X[:, f])
        if len(u) <= max_bins:
            c = 0.5 * (u[:-1] + u[1:])
        else:
            q = np.quantile(X[:, f], np.arange(1, max_bins) / max_bins, method="lower")
            c = np.unique(q)
            c = c[c < u[-1]]
        cuts.append(c)
    width = max(1, max(len(c) for c in cuts))
    edges = np.full((F, width), np.inf)
    n_edges = np.zeros(F, dtype=np.int64)
    bins = np.empty((n, F), dtype=np.uint16)
    for f, c in enumerate(cuts):
        edges[f, : len(c)] = c
        n_edges[f] = len(c)
        bins[:, f] = np.searchsorted(c, X[:, f], side="left")
    return bins, edges, n_edges


def grow(X, Y, weight, is_clf, params, splitter, seed, order=None, binned=None):
    """Grow one tree; returns a dict of node arrays plus raw importances.

    ``splitter`` is ``"best"`` (exact, presorted), ``"random"`` (one uniform
    threshold per feature) or ``"hist"`` (exact over ``binned`` cut points).
    """
    max_depth = -1 if params.get("max_depth") is None else params["max_depth"]
    mf = resolve_max_features(params.get("max_features"), X.shape[1])
    rng_state = np.array([derive_seed(seed, 0x7EE)], dtype=np.uint64)
    weight = np.asarray(weight, dtype=np.float64)
    if splitter == "best":
        if order is None:
            order = presort(X)
        order = K.filter_order(order, weight)
        res = K.grow_best(
            X, Y, weight, order, is_clf, max_depth, params.get("min_samples_split", 2),
            float(params["min_samples_leaf"]), mf, rng_state,
        )
    elif splitter == "hist":
        bins, edges, n_edges = binned if binned is not None else bin_features(X)
        idx = np.flatnonzero(weight > 0).astype(np.int64)
        res = K.grow_hist(
            bins, edges, n_edges, Y, weight, idx, max_depth, params.get("min_samples_split", 2),
            float(params["min_samples_leaf"]), mf, rng_state,
        )
    else:
        idx = np.flatnonzero(weight > 0).astype(np.int64)
        res = K.grow_random(
            X, Y, weight, idx, is_clf, max_depth, params.get("min_samples_split", 2),
            float(params["min_samples_leaf"]), mf, rng_state,
        )
    feature, threshold, left, right, value, node_weight, imp = res
    return {
        "feature": feature,
        "threshold": threshold,
        "left": left,
        "right": right,
        "value": value,
        "weight": node_weight,
    }, imp


def apply(tree, X) -> np.ndarray:
    return K.apply_tree(tree["feature"], tree["threshold"], tree["left"], tree["right"], X)


def tree_predict(tree, X) -> np.ndarray:
    return tree["value"][apply(tree, X)]


def _prepare(X, y, task, n_classes):
    X = np.ascontiguousarray(X, dtype=np.float64)
    return X, np.ascontiguousarray(target_matrix(y, task, n_classes))


def fit_tree_state(X, y, task, n_classes, params, seed):
    X, Y = _prepare(X, y, task, n_classes)
    tree, imp = grow(X, Y, np.ones(X.shape[0]), task == "classification", params, "best", seed)
    return {"trees": [tree], "importance": imp}


def fit_forest_state(X, y, task, n_classes, params, seed, splitter):
    X, Y = _prepare(X, y, task, n_classes)
    n = X.shape[0]
    order = presort(X) if splitter == "best" else None
    is_clf = task == "classification"

    def one(t):
        tree_seed = derive_seed(seed, t)
        if params["bootstrap"]:
            rng = np.random.default_rng(tree_seed)
            w = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)
        else:
            w = np.ones(n)
        return grow(X, Y, w, is_clf, params, splitter, tree_seed, order)

    workers = min(n_threads(), params["n_trees"])
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            grown = list(pool.map(one, range(params["n_trees"])))
    else:
        grown = [one(t) for t in range(params["n_trees"])]
    importance = np.zeros(X.shape[1])
    for _, imp in grown:
        # per-tree normalization so every tree counts equally
        s = imp.sum()
        if s > 0:
            importance += imp / s
    return {"trees": [t for t, _ in grown], "importance": importance}


def ensemble_output(state, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    acc = None
    for tree in state["trees"]:
        v = tree_predict(tree, X)
        acc = v.copy() if acc is None else acc + v
    return acc / len(state["trees"])


def proba(state, params, X, n_classes):
    return ensemble_output(state, X)


def value(state, params, X):
    return ensemble_output(state, X)[:, 0]
