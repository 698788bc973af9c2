"""Compiled inner loops for tree growth, tree traversal and neighbour search.

Trees are grown depth-first into flat node arrays. Per-sample targets are
given as a ``(n, K)`` statistics matrix: one-hot rows for classification
(split quality = Gini) and the raw target in a single column for regression
(split quality = squared error). In both cases a split maximizes
``sum_k L_k**2 / W_L + sum_k R_k**2 / W_R``, the impurity-reduction proxy,
and leaf values are ``stat / weight`` (class distribution or mean).

Random numbers come from a splitmix64 stream owned by the caller, so a tree
is reproducible from its seed regardless of thread placement.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, nogil=True)
def _next_u64(state):
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def _uniform(state):
    return np.float64(_next_u64(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True, nogil=True)
def _randbelow(state, n):
    r = int(_uniform(state) * n)
    if r >= n:
        r = n - 1
    return r


@njit(cache=True, nogil=True)
def _new_storage(cap, K):
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros((cap, K), dtype=np.float64)
    weight = np.zeros(cap, dtype=np.float64)
    return feature, threshold, left, right, value, weight


@njit(cache=True, nogil=True)
def _proxy(stat, w):
    s = 0.0
    for k in range(stat.shape[0]):
        s += stat[k] * stat[k]
    return s / w


@njit(cache=True, nogil=True)
def _is_pure(stat, w, is_clf):
    if not is_clf:
        return False
    for k in range(stat.shape[0]):
        if stat[k] == w:
            return True
    return False


@njit(cache=True, nogil=True)
def filter_order(order, sample_weight):
    """Keep only in-bag samples (weight > 0) in every presorted row."""
    F, n = order.shape
    m = 0
    for i in range(n):
        if sample_weight[order[0, i]] > 0:
            m += 1
    out = np.empty((F, m), dtype=np.int64)
    for f in range(F):
        j = 0
        for i in range(n):
            s = order[f, i]
            if sample_weight[s] > 0:
                out[f, j] = s
                j += 1
    return out


@njit(cache=True, nogil=True)
def grow_best(X, Y, w, order, is_clf, max_depth, min_samples_split, min_samples_leaf, max_features, rng_state):
    """Exact greedy tree on presorted in-bag samples.

    ``order`` is modified in place. Returns node arrays and per-feature
    impurity decrease (for importances).
    """
    F, m = order.shape
    K = Y.shape[1]
    cap = 2 * m + 1
    feature, threshold, left, right, value, weight = _new_storage(cap, K)
    importance = np.zeros(X.shape[1], dtype=np.float64)
    goes_left = np.zeros(X.shape[0], dtype=np.bool_)
    buf = np.empty(m, dtype=np.int64)
    vbuf = np.empty(m, dtype=np.float64)
    # feature values in presorted order; partitioned alongside ``order``
    V = np.empty((F, m), dtype=np.float64)
    for f in range(F):
        for p in range(m):
            V[f, p] = X[order[f, p], f]
    feats = np.arange(F)

    stack_node = np.empty(cap, dtype=np.int64)
    stack_start = np.empty(cap, dtype=np.int64)
    stack_end = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    sp = 0
    n_nodes = 1
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = m
    stack_depth[0] = 0
    sp = 1

    total = np.zeros(K)
    lstat = np.zeros(K)
    best_l = np.zeros(K)
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        start = stack_start[sp]
        end = stack_end[sp]
        depth = stack_depth[sp]

        total[:] = 0.0
        W = 0.0
        for p in range(start, end):
            s = order[0, p]
            W += w[s]
            for k in range(K):
                total[k] += w[s] * Y[s, k]
        weight[node] = W
        for k in range(K):
            value[node, k] = total[k] / W

        n_here = end - start
        if (
            (max_depth >= 0 and depth >= max_depth)
            or n_here < min_samples_split
            or W < 2 * min_samples_leaf
            or _is_pure(total, W, is_clf)
        ):
            continue

        parent_proxy = _proxy(total, W)
        best_gain = 1e-12 * max(1.0, abs(parent_proxy))
        best_f = -1
        best_t = 0.0

        # Fisher-Yates over features; constant features are skipped without
        # consuming the max_features budget.
        visited = 0
        for i in range(F):
            if visited >= max_features:
                break
            j = i + _randbelow(rng_state, F - i)
            tmp = feats[i]
            feats[i] = feats[j]
            feats[j] = tmp
            f = feats[i]
            if V[f, start] >= V[f, end - 1]:
                continue
            visited += 1
            lstat[:] = 0.0
            WL = 0.0
            for p in range(start, end - 1):
                s = order[f, p]
                WL += w[s]
                for k in range(K):
                    lstat[k] += w[s] * Y[s, k]
                xs = V[f, p]
                xn = V[f, p + 1]
                if xn <= xs:
                    continue
                WR = W - WL
                if WL < min_samples_leaf or WR < min_samples_leaf:
                    continue
                q = 0.0
                r = 0.0
                for k in range(K):
                    q += lstat[k] * lstat[k]
                    d = total[k] - lstat[k]
                    r += d * d
                gain = q / WL + r / WR - parent_proxy
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    t = 0.5 * (xs + xn)
                    if t >= xn:
                        t = xs
                    best_t = t

        if best_f < 0:
            continue

        importance[best_f] += best_gain
        for p in range(start, end):
            goes_left[order[best_f, p]] = V[best_f, p] <= best_t
        n_left = 0
        for p in range(start, end):
            if goes_left[order[0, p]]:
                n_left += 1
        for g in range(F):
            a = start
            b = 0
            for p in range(start, end):
                s = order[g, p]
                if goes_left[s]:
                    order[g, a] = s
                    V[g, a] = V[g, p]
                    a += 1
                else:
                    buf[b] = s
                    vbuf[b] = V[g, p]
                    b += 1
            for q2 in range(b):
                order[g, a + q2] = buf[q2]
                V[g, a + q2] = vbuf[q2]

        feature[node] = best_f
        threshold[node] = best_t
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        mid = start + n_left
        # push right first so the left subtree is numbered first
        stack_node[sp] = rc
        stack_start[sp] = mid
        stack_end[sp] = end
        stack_depth[sp] = depth + 1
        sp += 1
        stack_node[sp] = lc
        stack_start[sp] = start
        stack_end[sp] = mid
        stack_depth[sp] = depth + 1
        sp += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        weight[:n_nodes].copy(),
        importance,
    )


@njit(cache=True, nogil=True)
def grow_random(X, Y, w, idx, is_clf, max_depth, min_samples_split, min_samples_leaf, max_features, rng_state):
    """Extremely randomized tree: one uniform threshold per candidate feature."""
    m = idx.shape[0]
    F = X.shape[1]
    K = Y.shape[1]
    cap = 2 * m + 1
    feature, threshold, left, right, value, weight = _new_storage(cap, K)
    importance = np.zeros(F, dtype=np.float64)
    feats = np.arange(F)

    stack_node = np.empty(cap, dtype=np.int64)
    stack_start = np.empty(cap, dtype=np.int64)
    stack_end = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = m
    stack_depth[0] = 0
    sp = 1
    n_nodes = 1

    total = np.zeros(K)
    lstat = np.zeros(K)
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        start = stack_start[sp]
        end = stack_end[sp]
        depth = stack_depth[sp]

        total[:] = 0.0
        W = 0.0
        for p in range(start, end):
            s = idx[p]
            W += w[s]
            for k in range(K):
                total[k] += w[s] * Y[s, k]
        weight[node] = W
        for k in range(K):
            value[node, k] = total[k] / W

        if (
            (max_depth >= 0 and depth >= max_depth)
            or end - start < min_samples_split
            or W < 2 * min_samples_leaf
            or _is_pure(total, W, is_clf)
        ):
            continue

        parent_proxy = _proxy(total, W)
        best_gain = -np.inf
        best_f = -1
        best_t = 0.0
        visited = 0
        for i in range(F):
            if visited >= max_features:
                break
            j = i + _randbelow(rng_state, F - i)
            tmp = feats[i]
            feats[i] = feats[j]
            feats[j] = tmp
            f = feats[i]
            lo = np.inf
            hi = -np.inf
            for p in range(start, end):
                x = X[idx[p], f]
                if x < lo:
                    lo = x
                if x > hi:
                    hi = x
            if hi <= lo:
                continue
            visited += 1
            t = lo + _uniform(rng_state) * (hi - lo)
            if t >= hi:
                t = lo
            lstat[:] = 0.0
            WL = 0.0
            for p in range(start, end):
                s = idx[p]
                if X[s, f] <= t:
                    WL += w[s]
                    for k in range(K):
                        lstat[k] += w[s] * Y[s, k]
            WR = W - WL
            if WL < min_samples_leaf or WR < min_samples_leaf:
                continue
            q = 0.0
            r = 0.0
            for k in range(K):
                q += lstat[k] * lstat[k]
                d = total[k] - lstat[k]
                r += d * d
            gain = q / WL + r / WR - parent_proxy
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_t = t

        if best_f < 0:
            continue

        if best_gain > 0:
            importance[best_f] += best_gain
        a = start
        b = end - 1
        while a <= b:
            if X[idx[a], best_f] <= best_t:
                a += 1
            else:
                tmp = idx[a]
                idx[a] = idx[b]
                idx[b] = tmp
                b -= 1
        mid = a

        feature[node] = best_f
        threshold[node] = best_t
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        stack_node[sp] = rc
        stack_start[sp] = mid
        stack_end[sp] = end
        stack_depth[sp] = depth + 1
        sp += 1
        stack_node[sp] = lc
        stack_start[sp] = start
        stack_end[sp] = mid
        stack_depth[sp] = depth + 1
        sp += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        weight[:n_nodes].copy(),
        importance,
    )


@njit(cache=True, nogil=True)
def grow_hist(B, edges, n_edges, Y, w, idx, max_depth, min_samples_split, min_samples_leaf, max_features, rng_state):
    """Greedy tree over pre-binned features.

    ``B[s, f]`` is the bin of sample ``s`` on feature ``f``: the number of
    cut points in ``edges[f, :n_edges[f]]`` strictly below the raw value, so
    splitting after bin ``e`` sends ``x <= edges[f, e]`` left. Thresholds are
    stored as raw values and trees apply to unbinned data.
    """
    m = idx.shape[0]
    F = B.shape[1]
    K = Y.shape[1]
    nb = edges.shape[1] + 1
    cap = 2 * m + 1
    feature, threshold, left, right, value, weight = _new_storage(cap, K)
    importance = np.zeros(F, dtype=np.float64)
    feats = np.arange(F)
    hist = np.zeros((F, nb, K))
    hw = np.zeros((F, nb))

    stack_node = np.empty(cap, dtype=np.int64)
    stack_start = np.empty(cap, dtype=np.int64)
    stack_end = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = m
    stack_depth[0] = 0
    sp = 1
    n_nodes = 1

    total = np.zeros(K)
    lstat = np.zeros(K)
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        start = stack_start[sp]
        end = stack_end[sp]
        depth = stack_depth[sp]

        total[:] = 0.0
        W = 0.0
        for p in range(start, end):
            s = idx[p]
            W += w[s]
            for k in range(K):
                total[k] += w[s] * Y[s, k]
        weight[node] = W
        for k in range(K):
            value[node, k] = total[k] / W

        if (
            (max_depth >= 0 and depth >= max_depth)
            or end - start < min_samples_split
            or W < 2 * min_samples_leaf
        ):
            continue

        hist[:, :, :] = 0.0
        hw[:, :] = 0.0
        for p in range(start, end):
            s = idx[p]
            ws = w[s]
            for f in range(F):
                b = B[s, f]
                hw[f, b] += ws
                for k in range(K):
                    hist[f, b, k] += ws * Y[s, k]

        parent_proxy = _proxy(total, W)
        best_gain = 1e-12 * max(1.0, abs(parent_proxy))
        best_f = -1
        best_e = -1
        visited = 0
        for i in range(F):
            if visited >= max_features:
                break
            j = i + _randbelow(rng_state, F - i)
            tmp = feats[i]
            feats[i] = feats[j]
            feats[j] = tmp
            f = feats[i]
            ne = n_edges[f]
            occupied = 0
            for b in range(ne + 1):
                if hw[f, b] > 0:
                    occupied += 1
            if occupied < 2:
                continue
            visited += 1
            lstat[:] = 0.0
            WL = 0.0
            for e in range(ne):
                WL += hw[f, e]
                for k in range(K):
                    lstat[k] += hist[f, e, k]
                if hw[f, e + 1] == 0 and e + 1 < ne:
                    continue
                WR = W - WL
                if WL < min_samples_leaf or WR < min_samples_leaf or WL <= 0 or WR <= 0:
                    continue
                q = 0.0
                r = 0.0
                for k in range(K):
                    q += lstat[k] * lstat[k]
                    d = total[k] - lstat[k]
                    r += d * d
                gain = q / WL + r / WR - parent_proxy
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_e = e

        if best_f < 0:
            continue

        importance[best_f] += best_gain
        a = start
        b2 = end - 1
        while a <= b2:
            if B[idx[a], best_f] <= best_e:
                a += 1
            else:
                tmp = idx[a]
                idx[a] = idx[b2]
                idx[b2] = tmp
                b2 -= 1
        mid = a

        feature[node] = best_f
        threshold[node] = edges[best_f, best_e]
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        stack_node[sp] = rc
        stack_start[sp] = mid
        stack_end[sp] = end
        stack_depth[sp] = depth + 1
        sp += 1
        stack_node[sp] = lc
        stack_start[sp] = start
        stack_end[sp] = mid
        stack_depth[sp] = depth + 1
        sp += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        weight[:n_nodes].copy(),
        importance,
    )


@njit(cache=True, nogil=True)
def apply_tree(feature, threshold, left, right, X):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True, nogil=True)
def knn_query(train, queries, k, manhattan):
    """k nearest training rows for every query, ascending by (distance, index)."""
    n = train.shape[0]
    q = queries.shape[0]
    F = train.shape[1]
    dist = np.empty((q, k), dtype=np.float64)
    ind = np.empty((q, k), dtype=np.int64)
    bd = np.empty(k, dtype=np.float64)
    bi = np.empty(k, dtype=np.int64)
    for a in range(q):
        for j in range(k):
            bd[j] = np.inf
            bi[j] = -1
        for j in range(n):
            bound = bd[k - 1]
            d = 0.0
            if manhattan:
                for f in range(F):
                    d += abs(train[j, f] - queries[a, f])
                    if d > bound:
                        break
            else:
                for f in range(F):
                    diff = train[j, f] - queries[a, f]
                    d += diff * diff
                    if d > bound:
                        break
            if d < bound:
                pos = k - 1
                while pos > 0 and bd[pos - 1] > d:
                    bd[pos] = bd[pos - 1]
                    bi[pos] = bi[pos - 1]
                    pos -= 1
                bd[pos] = d
                bi[pos] = j
        for j in range(k):
            dist[a, j] = bd[j] if manhattan else np.sqrt(bd[j])
            ind[a, j] = bi[j]
    return dist, ind
