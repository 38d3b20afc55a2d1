"""Hot inner loops of the tree baselines.

Each kernel exists twice: an explicit-loop version compiled with numba and a
vectorised numpy version. Both perform the same floating point operations in
the same order, so they select identical splits. ``best_split`` and
``route_rows`` are bound to one of the two according to ``_jit.USE_NUMBA``.
"""

import numpy as np

from battrul._jit import USE_NUMBA, njit


def _best_split_loop(X, Y, features, min_leaf):
    n, d = Y.shape
    best_f = -1
    best_t = 0.0
    best_s = np.inf
    left_sum = np.empty(d)
    left_sq = np.empty(d)
    tot_sum = np.empty(d)
    tot_sq = np.empty(d)
    for fi in range(features.shape[0]):
        f = features[fi]
        order = np.argsort(X[:, f], kind="mergesort")
        for j in range(d):
            tot_sum[j] = 0.0
            tot_sq[j] = 0.0
        for i in range(n):
            r = order[i]
            for j in range(d):
                y = Y[r, j]
                tot_sum[j] += y
                tot_sq[j] += y * y
        for j in range(d):
            left_sum[j] = 0.0
            left_sq[j] = 0.0
        for i in range(n - 1):
            r = order[i]
            for j in range(d):
                y = Y[r, j]
                left_sum[j] += y
                left_sq[j] += y * y
            nl = i + 1
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            xv = X[r, f]
            xn = X[order[i + 1], f]
            if not xn > xv:
                continue
            s = 0.0
            for j in range(d):
                rs = tot_sum[j] - left_sum[j]
                rq = tot_sq[j] - left_sq[j]
                s += (left_sq[j] - left_sum[j] * left_sum[j] / nl) + (rq - rs * rs / nr)
            if s < best_s:
                best_s = s
                best_f = f
                best_t = 0.5 * (xv + xn)
    return best_f, best_t, best_s


best_split_jit = njit(_best_split_loop)


def best_split_numpy(X, Y, features, min_leaf):
    n = Y.shape[0]
    best_f, best_t, best_s = -1, 0.0, np.inf
    if n < 2:
        return best_f, best_t, best_s
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    size_ok = (nl >= min_leaf) & (nr >= min_leaf)
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = Y[order]
        cs = np.cumsum(ys, axis=0)
        cq = np.cumsum(ys * ys, axis=0)
        ls, lq = cs[:-1], cq[:-1]
        rs = cs[-1] - ls
        rq = cq[-1] - lq
        s = ((lq - ls * ls / nl[:, None]) + (rq - rs * rs / nr[:, None])).sum(axis=1)
        s = np.where(size_ok & (xs[1:] > xs[:-1]), s, np.inf)
        i = int(np.argmin(s))
        if s[i] < best_s:
            best_s = float(s[i])
            best_f = int(f)
            best_t = 0.5 * (xs[i] + xs[i + 1])
    return best_f, float(best_t), best_s


def _route_rows_loop(X, feature, threshold, left, right):
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


route_rows_jit = njit(_route_rows_loop)


def route_rows_numpy(X, feature, threshold, left, right):
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = feature[node] >= 0
    rows = np.arange(X.shape[0])
    while active.any():
        idx = rows[active]
        cur = node[idx]
        go_left = X[idx, feature[cur]] <= threshold[cur]
        node[idx] = np.where(go_left, left[cur], right[cur])
        active = feature[node] >= 0
    return node


if USE_NUMBA:
    best_split = best_split_jit
    route_rows = route_rows_jit
else:
    best_split = best_split_numpy
    route_rows = route_rows_numpy
