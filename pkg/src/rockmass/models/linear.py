"""Multinomial logistic regression (batch gradient descent) and least squares."""

from __future__ import annotations

import numpy as np

from rockmass.errors import DegenerateTraining


def _design(X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(X.shape[0]), X])


def _softmax(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def _loss(A, Y, W, l2):
    Z = A @ W
    Z = Z - Z.max(axis=1, keepdims=True)
    logp = Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))
    return -(Y * logp).sum() / A.shape[0] + 0.5 * l2 * (W[1:] ** 2).sum()


def fit_logistic_state(X, y, task, n_classes, params, seed):
    if len(np.unique(y)) < 2:
        raise DegenerateTraining("logistic regression needs at least two classes in the training data")
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    A = _design(X)
    Y = np.zeros((n, n_classes))
    Y[np.arange(n), y] = 1.0
    l2 = params["l2"]
    lr = params["learning_rate"]
    if lr == "auto":
        # 1/L with L bounding the Hessian of the mean cross-entropy
        top = np.linalg.eigvalsh(A.T @ A / n)[-1]
        lr = 1.0 / (0.5 * top + l2)
    W = np.zeros((d + 1, n_classes))
    prev = _loss(A, Y, W, l2)
    n_iter = 0
    for n_iter in range(1, params["max_iter"] + 1):
        P = _softmax(A @ W)
        grad = A.T @ (P - Y) / n
        grad[1:] += l2 * W[1:]
        W = W - lr * grad
        cur = _loss(A, Y, W, l2)
        if abs(prev - cur) < params["tol"]:
            break
        prev = cur
    return {"coef": W, "n_iter": n_iter}


def logistic_proba(state, params, X, n_classes):
    return _softmax(_design(np.asarray(X, dtype=np.float64)) @ state["coef"])


def fit_linear_state(X, y, task, n_classes, params, seed):
    X = np.asarray(X, dtype=np.float64)
    A = _design(X)
    yv = np.asarray(y, dtype=np.float64)
    l2 = params["l2"]
    if l2 > 0:
        P = np.eye(A.shape[1]) * l2
        P[0, 0] = 0.0
        coef = np.linalg.solve(A.T @ A + P, A.T @ yv)
    else:
        coef = np.linalg.lstsq(A, yv, rcond=None)[0]
    return {"coef": coef}


def linear_value(state, params, X):
    return _design(np.asarray(X, dtype=np.float64)) @ state["coef"]
