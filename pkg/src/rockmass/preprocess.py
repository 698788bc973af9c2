"""Scaling, SMOTE oversampling, outlier masks and regression resampling.

Everything here works on plain ``(n, d)`` float arrays; the pipeline that
strings the steps together lives in ``rockmass.pipeline``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from rockmass.errors import BadContamination, ConstantColumnWarning, TooFewSamples, UnknownKind
from rockmass.qsystem import canonical_order

SCALER_KINDS = ("minmax", "standard", "none")


def scaler_kind(kind) -> str:
    key = "none" if kind is None else str(kind).strip().lower().replace("_", "").replace("-", "")
    aliases = {"minmax": "minmax", "minmax01": "minmax", "standard": "standard", "zscore": "standard", "none": "none", "identity": "none"}
    if key not in aliases:
        raise UnknownKind(f"unknown scaler {kind!r}")
    return aliases[key]


@dataclass(frozen=True, eq=False)
class Scaler:
    """Fitted per-feature affine map ``(x - offset) / scale``.

    Constant training columns get ``scale = inf`` so that they map to 0.
    """

    kind: str
    offset: np.ndarray = field(default_factory=lambda: np.zeros(0))
    scale: np.ndarray = field(default_factory=lambda: np.ones(0))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "offset": self.offset.tolist(), "scale": [_enc(v) for v in self.scale.tolist()]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scaler":
        return cls(d["kind"], np.asarray(d["offset"], dtype=np.float64), np.asarray([_dec(v) for v in d["scale"]], dtype=np.float64))


def _enc(v: float):
    return "inf" if math.isinf(v) else v


def _dec(v) -> float:
    return math.inf if v == "inf" else float(v)


def fit_scaler(X, kind="minmax") -> Scaler:
    kind = scaler_kind(kind)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("fit_scaler needs at least one row")
    d = X.shape[1]
    if kind == "none":
        return Scaler(kind, np.zeros(d), np.ones(d))
    if kind == "minmax":
        offset = X.min(axis=0)
        scale = X.max(axis=0) - offset
    else:
        offset = X.mean(axis=0)
        scale = X.std(axis=0)
    const = scale == 0
    if const.any():
        warnings.warn(
            f"{int(const.sum())} constant column(s) map to 0 (columns {np.flatnonzero(const).tolist()})",
            ConstantColumnWarning,
            stacklevel=2,
        )
    scale = np.where(const, np.inf, scale)
    return Scaler(kind, offset, scale)


def apply_scaler(scaler: Scaler, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if scaler.kind == "none":
        return X.copy()
    if X.shape[-1] != scaler.offset.shape[0]:
        raise ValueError(f"scaler fitted on {scaler.offset.shape[0]} columns, got {X.shape[-1]}")
    out = (X - scaler.offset) / scaler.scale
    # inf scale gives -0.0 on the low side; normalise to +0.0
    out[:, np.isinf(scaler.scale)] = 0.0
    return out


# ---------------------------------------------------------------- SMOTE


@dataclass(frozen=True)
class SmoteResult:
    X: np.ndarray
    y: np.ndarray
    # for synthetic rows: indices (into the input) of the base sample and the neighbour, and lambda
    parents: np.ndarray
    lam: np.ndarray


def _neighbours(Xc: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest other members (Euclidean, ties by index)."""
    from rockmass.models._kernels import knn_query

    # k + 1 because each point is its own nearest neighbour
    _, ind = knn_query(np.ascontiguousarray(Xc), np.ascontiguousarray(Xc), min(k + 1, Xc.shape[0]), False)
    out = np.empty((Xc.shape[0], min(k, Xc.shape[0] - 1)), dtype=np.int64)
    for i in range(Xc.shape[0]):
        row = [j for j in ind[i] if j != i]
        out[i] = row[: out.shape[1]]
    return out


def smote_oversample(
    X,
    y,
    k_neighbors: int = 5,
    target: Mapping | None = None,
    seed: int = 0,
    return_parents: bool = False,
):
    """Synthetic minority oversampling.

    Each class below its target count receives ``target - count`` synthetic
    rows ``x + lam * (x_nn - x)``, with ``x`` drawn uniformly from the class,
    ``x_nn`` one of its ``k_neighbors`` nearest same-class neighbours and
    ``lam ~ U[0, 1]``. Originals come first and are unchanged; synthetic rows
    follow grouped by class in canonical order.

    ``target`` maps class -> desired count; default lifts every class to the
    majority count. Classes at or above their target are left alone.
    Returns ``(X, y)`` or a ``SmoteResult`` when ``return_parents`` is set.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if k_neighbors < 1:
        raise ValueError("k_neighbors must be >= 1")
    classes = canonical_order(y.tolist())
    counts = {c: int(np.sum(y == c)) for c in classes}
    if target is None:
        top = max(counts.values()) if counts else 0
        target = {c: top for c in classes}
    rng = np.random.default_rng(seed)
    new_X, new_y, parents, lams = [X], [y], [], []
    for c in classes:
        need = int(target.get(c, counts[c])) - counts[c]
        if need <= 0:
            continue
        if counts[c] < 2:
            raise TooFewSamples(c, counts[c])
        members = np.flatnonzero(y == c)
        nn = _neighbours(X[members], k_neighbors)
        base = rng.integers(0, len(members), size=need)
        pick = rng.integers(0, nn.shape[1], size=need)
        lam = rng.random(need)
        a = members[base]
        b = members[nn[base, pick]]
        new_X.append(X[a] + lam[:, None] * (X[b] - X[a]))
        new_y.append(np.full(need, c, dtype=y.dtype))
        parents.append(np.stack([a, b], axis=1))
        lams.append(lam)
    Xo = np.concatenate(new_X)
    yo = np.concatenate(new_y)
    if not return_parents:
        return Xo, yo
    par = np.concatenate(parents) if parents else np.zeros((0, 2), dtype=np.int64)
    lam = np.concatenate(lams) if lams else np.zeros(0)
    return SmoteResult(Xo, yo, par, lam)


# ---------------------------------------------------------------- outliers


def mad_outlier_mask(X, threshold: float = 3.5) -> np.ndarray:
    """Keep-mask from the univariate modified z-score ``0.6745 |x - med| / MAD``.

    A row is dropped if any feature exceeds ``threshold``. Columns with
    MAD = 0 are skipped with a warning.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 3:
        raise ValueError("mad_outlier_mask needs at least 3 rows")
    med = np.median(X, axis=0)
    mad = np.median(np.abs(X - med), axis=0)
    zero = mad == 0
    if zero.any() and not np.all(X[:, zero] == med[zero]):
        warnings.warn(
            f"{int(zero.sum())} column(s) with zero MAD skipped", ConstantColumnWarning, stacklevel=2
        )
    keep = np.ones(X.shape[0], dtype=bool)
    if (~zero).any():
        z = 0.6745 * np.abs(X[:, ~zero] - med[~zero]) / mad[~zero]
        keep = ~np.any(z > threshold, axis=1)
    return keep


def _c_factor(n) -> np.ndarray:
    """Average unsuccessful-search path length in a BST of n nodes."""
    n = np.asarray(n, dtype=np.float64)
    out = np.zeros_like(n)
    big = n > 2
    out[big] = 2.0 * (np.log(n[big] - 1.0) + np.euler_gamma) - 2.0 * (n[big] - 1.0) / n[big]
    out[n == 2] = 1.0
    return out


def _grow_itree(X: np.ndarray, idx: np.ndarray, rng: np.random.Generator, max_depth: int):
    """Isolation tree as flat arrays (feature, threshold, left, right, size)."""
    feature, threshold, left, right, size = [], [], [], [], []
    stack = [(idx, 0, -1, False)]
    while stack:
        rows, depth, parent, is_right = stack.pop()
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(len(rows))
        if parent >= 0:
            if is_right:
                right[parent] = node
            else:
                left[parent] = node
        if depth >= max_depth or len(rows) <= 1:
            continue
        sub = X[rows]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        cand = np.flatnonzero(hi > lo)
        if cand.size == 0:
            continue
        f = int(cand[rng.integers(cand.size)])
        t = float(rng.uniform(lo[f], hi[f]))
        go_left = sub[:, f] < t
        feature[node] = f
        threshold[node] = t
        stack.append((rows[~go_left], depth + 1, node, True))
        stack.append((rows[go_left], depth + 1, node, False))
    return (np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(size))


def _path_lengths(tree, X: np.ndarray) -> np.ndarray:
    feature, threshold, left, right, size = tree
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    depth = np.zeros(n)
    active = feature[node] >= 0
    while active.any():
        a = np.flatnonzero(active)
        f = feature[node[a]]
        go_left = X[a, f] < threshold[node[a]]
        node[a] = np.where(go_left, left[node[a]], right[node[a]])
        depth[a] += 1
        active = feature[node] >= 0
    return depth + _c_factor(size[node])


def isolation_scores(X, trees: int = 100, subsample: int = 256, seed: int = 0) -> np.ndarray:
    """Anomaly score ``2 ** (-E[h(x)] / c(psi))``; higher means more isolated."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    psi = min(subsample, n)
    max_depth = int(math.ceil(math.log2(max(psi, 2))))
    total = np.zeros(n)
    for t in range(trees):
        rng = np.random.default_rng([seed, t])
        rows = rng.choice(n, size=psi, replace=False)
        total += _path_lengths(_grow_itree(X, rows, rng, max_depth), X)
    mean_h = total / trees
    return 2.0 ** (-mean_h / _c_factor(np.array([psi]))[0]) if psi > 1 else np.full(n, 0.5)


def isolation_forest_mask(
    X, trees: int = 100, subsample: int = 256, contamination: float = 0.05, seed: int = 0
) -> np.ndarray:
    """Keep-mask dropping rows whose score lies above the ``1 - contamination`` quantile."""
    if not (0.0 < contamination < 0.5):
        raise BadContamination(f"contamination must lie in (0, 0.5), got {contamination!r}")
    scores = isolation_scores(X, trees, subsample, seed)
    cut = np.quantile(scores, 1.0 - contamination, method="higher")
    return scores <= cut


# ---------------------------------------------------------------- regression resampling


@dataclass(frozen=True)
class ResampleResult:
    X: np.ndarray
    y: np.ndarray
    parents: np.ndarray
    lam: np.ndarray
    bin_counts_before: np.ndarray
    bin_counts_after: np.ndarray


def label_bins(y, n_bins: int) -> np.ndarray:
    """Equal-width bin index over the label range (max lands in the last bin)."""
    return label_bins_like(y, y, n_bins)


def regression_resample(
    X,
    y,
    n_bins: int = 10,
    per_bin_target: int = 1000,
    k_neighbors: int = 5,
    seed: int = 0,
    return_parents: bool = False,
):
    """SMOTE inside equal-width label bins.

    Bins with fewer than ``per_bin_target`` rows are topped up with
    synthetic rows; the synthetic label uses the same ``lam`` as the
    features. Bins with a single row cannot be interpolated and are skipped
    with a warning; empty bins stay empty. Original rows are never removed.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    if not np.all(np.isfinite(y)):
        raise ValueError("labels must be finite")
    bins = label_bins(y, n_bins)
    before = np.bincount(bins, minlength=n_bins)
    rng = np.random.default_rng(seed)
    new_X, new_y, parents, lams = [X], [y], [], []
    for b in range(n_bins):
        count = int(before[b])
        need = per_bin_target - count
        if need <= 0 or count == 0:
            continue
        if count < 2:
            warnings.warn(str(TooFewSamples(f"bin {b}", count)), UserWarning, stacklevel=2)
            continue
        members = np.flatnonzero(bins == b)
        nn = _neighbours(X[members], k_neighbors)
        base = rng.integers(0, count, size=need)
        pick = rng.integers(0, nn.shape[1], size=need)
        lam = rng.random(need)
        a = members[base]
        c = members[nn[base, pick]]
        new_X.append(X[a] + lam[:, None] * (X[c] - X[a]))
        new_y.append(y[a] + lam * (y[c] - y[a]))
        parents.append(np.stack([a, c], axis=1))
        lams.append(lam)
    Xo = np.concatenate(new_X)
    yo = np.concatenate(new_y)
    if not return_parents:
        return Xo, yo
    after = np.bincount(label_bins_like(yo, y, n_bins), minlength=n_bins)
    par = np.concatenate(parents) if parents else np.zeros((0, 2), dtype=np.int64)
    lam = np.concatenate(lams) if lams else np.zeros(0)
    return ResampleResult(Xo, yo, par, lam, before, after)


def label_bins_like(values, reference, n_bins: int) -> np.ndarray:
    """Bin ``values`` on the equal-width grid defined by ``reference``."""
    ref = np.asarray(reference, dtype=np.float64)
    lo, hi = ref.min(), ref.max()
    v = np.asarray(values, dtype=np.float64)
    if hi == lo:
        return np.zeros(v.shape[0], dtype=np.int64)
    return np.clip(np.floor((v - lo) / (hi - lo) * n_bins).astype(np.int64), 0, n_bins - 1)
