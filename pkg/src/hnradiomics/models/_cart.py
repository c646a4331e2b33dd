"""Compiled CART kernels: Gini trees with random feature subsets, ordered and
categorical (subset) splits, grown and evaluated for whole forests at once.

A forest is stored flat: node ``k`` of tree ``t`` lives at ``tree_start[t] + k``;
child pointers are local to the tree. ``feature < 0`` marks a leaf whose class
is ``value``. Categorical nodes send a row left when bit ``code`` of
``catmask`` is set; ordered nodes send it left when ``x <= threshold``.
"""
from __future__ import annotations

import numpy as np
from numba import njit

MAX_CATEGORIES = 64


@njit(cache=True)
def _splitmix_next(state):
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _randint(state, n):
    return np.int64(_splitmix_next(state) % np.uint64(n))


@njit(cache=True)
def _weighted_gini(pos_l, n_l, pos_r, n_r):
    # n * gini(node) summed over both children
    out = 0.0
    if n_l > 0:
        out += 2.0 * pos_l * (n_l - pos_l) / n_l
    if n_r > 0:
        out += 2.0 * pos_r * (n_r - pos_r) / n_r
    return out


@njit(cache=True)
def _best_ordered(X, y, idx, start, end, j):
    n = end - start
    vals = np.empty(n)
    labs = np.empty(n, dtype=np.int64)
    for k in range(n):
        vals[k] = X[idx[start + k], j]
        labs[k] = y[idx[start + k]]
    order = np.argsort(vals, kind="mergesort")
    pos_total = 0
    for k in range(n):
        pos_total += labs[k]
    best = np.inf
    thr = 0.0
    pos_l = 0
    for k in range(n - 1):
        pos_l += labs[order[k]]
        a = vals[order[k]]
        b = vals[order[k + 1]]
        if b > a:
            g = _weighted_gini(pos_l, k + 1, pos_total - pos_l, n - k - 1)
            if g < best:
                best = g
                thr = a + (b - a) / 2.0
                if thr >= b:
                    thr = a
    return best, thr


@njit(cache=True)
def _best_categorical(X, y, idx, start, end, j):
    counts = np.zeros(MAX_CATEGORIES, dtype=np.int64)
    pos = np.zeros(MAX_CATEGORIES, dtype=np.int64)
    for k in range(start, end):
        c = np.int64(X[idx[k], j])
        counts[c] += 1
        pos[c] += y[idx[k]]
    present = np.flatnonzero(counts)
    m = present.size
    if m < 2:
        return np.inf, np.uint64(0)
    rate = np.empty(m)
    for k in range(m):
        c = present[k]
        rate[k] = pos[c] / counts[c]
    order = np.argsort(rate, kind="mergesort")  # stable: ties keep category order
    n = end - start
    pos_total = 0
    for k in range(m):
        pos_total += pos[present[k]]
    best = np.inf
    best_cut = -1
    n_l = 0
    pos_l = 0
    for k in range(m - 1):
        c = present[order[k]]
        n_l += counts[c]
        pos_l += pos[c]
        g = _weighted_gini(pos_l, n_l, pos_total - pos_l, n - n_l)
        if g < best:
            best = g
            best_cut = k
    mask = np.uint64(0)
    for k in range(best_cut + 1):
        mask |= np.uint64(1) << np.uint64(present[order[k]])
    return best, mask


@njit(cache=True)
def _grow_tree(X, y, is_cat, idx, mtry, state, feature, threshold, catmask, left, right, value):
    """Grow one tree on sample rows ``idx`` (repeats allowed); returns its node count."""
    n = idx.size
    d = X.shape[1]
    stack_node = np.empty(n + 1, dtype=np.int64)
    stack_start = np.empty(n + 1, dtype=np.int64)
    stack_end = np.empty(n + 1, dtype=np.int64)
    top = 0
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = n
    top = 1
    n_nodes = 1
    feats = np.arange(d)
    while top > 0:
        top -= 1
        node = stack_node[top]
        start = stack_start[top]
        end = stack_end[top]
        npos = 0
        for k in range(start, end):
            npos += y[idx[k]]
        size = end - start
        value[node] = 1 if 2 * npos >= size else 0
        feature[node] = -1
        if npos == 0 or npos == size:
            continue
        best = np.inf
        best_j = -1
        best_thr = 0.0
        best_mask = np.uint64(0)
        visited_valid = 0
        # partial Fisher-Yates: draw features until mtry non-constant ones were tried
        for k in range(d):
            r = k + _randint(state, d - k)
            tmp = feats[k]
            feats[k] = feats[r]
            feats[r] = tmp
            j = feats[k]
            if is_cat[j]:
                g, mask = _best_categorical(X, y, idx, start, end, j)
                thr = 0.0
            else:
                g, thr = _best_ordered(X, y, idx, start, end, j)
                mask = np.uint64(0)
            if g == np.inf:
                continue
            visited_valid += 1
            if g < best:
                best = g
                best_j = j
                best_thr = thr
                best_mask = mask
            if visited_valid >= mtry:
                break
        if best_j < 0:
            continue
        # in-place partition of idx[start:end]
        i = start
        k = end - 1
        while i <= k:
            row = idx[i]
            if is_cat[best_j]:
                go_left = ((best_mask >> np.uint64(np.int64(X[row, best_j]))) & np.uint64(1)) != 0
            else:
                go_left = X[row, best_j] <= best_thr
            if go_left:
                i += 1
            else:
                idx[i] = idx[k]
                idx[k] = row
                k -= 1
        feature[node] = best_j
        threshold[node] = best_thr
        catmask[node] = best_mask
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_node[top] = n_nodes + 1
        stack_start[top] = i
        stack_end[top] = end
        top += 1
        stack_node[top] = n_nodes
        stack_start[top] = start
        stack_end[top] = i
        top += 1
        n_nodes += 2
    return n_nodes


@njit(cache=True)
def grow_forest(X, y, is_cat, samples, offsets, seeds, mtry):
    """One tree per sample block ``samples[offsets[t]:offsets[t+1]]``.

    Returns flat node arrays plus ``tree_start`` (length n_trees + 1).
    """
    n_trees = offsets.size - 1
    cap = 0
    for t in range(n_trees):
        cap += 2 * (offsets[t + 1] - offsets[t]) - 1
    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap)
    catmask = np.zeros(cap, dtype=np.uint64)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap, dtype=np.int8)
    tree_start = np.zeros(n_trees + 1, dtype=np.int64)
    state = np.zeros(1, dtype=np.uint64)
    pos = 0
    for t in range(n_trees):
        state[0] = seeds[t]
        idx = samples[offsets[t]:offsets[t + 1]].copy()
        m = _grow_tree(X, y, is_cat, idx, mtry, state,
                       feature[pos:], threshold[pos:], catmask[pos:], left[pos:], right[pos:], value[pos:])
        tree_start[t] = pos
        pos += m
    tree_start[n_trees] = pos
    return feature[:pos], threshold[:pos], catmask[:pos], left[:pos], right[:pos], value[:pos], tree_start


@njit(cache=True)
def tree_votes(X, is_cat, feature, threshold, catmask, left, right, value, tree_start):
    """Per-row, per-tree predicted class, shape (rows, trees)."""
    n = X.shape[0]
    n_trees = tree_start.size - 1
    out = np.zeros((n, n_trees), dtype=np.int8)
    for r in range(n):
        for t in range(n_trees):
            base = tree_start[t]
            node = 0
            while feature[base + node] >= 0:
                j = feature[base + node]
                if is_cat[j]:
                    go_left = ((catmask[base + node] >> np.uint64(np.int64(X[r, j]))) & np.uint64(1)) != 0
                else:
                    go_left = X[r, j] <= threshold[base + node]
                node = left[base + node] if go_left else right[base + node]
            out[r, t] = value[base + node]
    return out
