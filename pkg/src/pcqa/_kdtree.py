"""Numba KD-tree kernels.

The tree is a flat set of arrays; ``spts`` holds the points in tree order
(``spts[t] == pts[perm[t]]``).  Node ``i`` owns ``perm[start[i]:end[i]]``,
carries a tight bounding box ``lo[i], hi[i]`` and, when internal, children
``left[i], right[i]`` (``-1`` for leaves).  Splits are at the median of the
widest-spread axis; ordering inside a split uses ``(coordinate, index)`` so
the build is deterministic.

Neighbors are ranked by ``(squared distance, index)``.  Squared distances
are always evaluated as ``(dx*dx + dy*dy) + dz*dz`` so box lower bounds,
candidate distances and the test oracles agree bit for bit.
"""
import numpy as np

from ._accel import njit, prange

LEAF_SIZE = 16


@njit(cache=True)
def _key_less(pts, dim, a, b):
    va = pts[a, dim]
    vb = pts[b, dim]
    return va < vb or (va == vb and a < b)


@njit(cache=True)
def _select(pts, perm, lo, hi, kth, dim):
    """Reorder perm[lo:hi] so perm[kth] holds the kth key and the halves are split around it."""
    hi -= 1
    while hi > lo:
        mid = (lo + hi) >> 1
        # median of three pivot
        a, b, c = perm[lo], perm[mid], perm[hi]
        if _key_less(pts, dim, a, b):
            if _key_less(pts, dim, b, c):
                piv = b
            elif _key_less(pts, dim, a, c):
                piv = c
            else:
                piv = a
        else:
            if _key_less(pts, dim, a, c):
                piv = a
            elif _key_less(pts, dim, b, c):
                piv = c
            else:
                piv = b
        i, j = lo, hi
        while i <= j:
            while _key_less(pts, dim, perm[i], piv):
                i += 1
            while _key_less(pts, dim, piv, perm[j]):
                j -= 1
            if i <= j:
                t = perm[i]
                perm[i] = perm[j]
                perm[j] = t
                i += 1
                j -= 1
        if kth <= j:
            hi = j
        elif kth >= i:
            lo = i
        else:
            return


@njit(cache=True)
def build_tree(pts, leaf_size):
    n = pts.shape[0]
    max_nodes = 2 * (n // leaf_size + 1) * 2 + 1
    start = np.empty(max_nodes, np.int64)
    end = np.empty(max_nodes, np.int64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    lo = np.empty((max_nodes, 3), np.float64)
    hi = np.empty((max_nodes, 3), np.float64)
    perm = np.arange(n).astype(np.int64)

    stack = np.empty(128, np.int64)
    start[0] = 0
    end[0] = n
    n_nodes = 1
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s = start[node]
        e = end[node]
        for d in range(3):
            lo[node, d] = np.inf
            hi[node, d] = -np.inf
        for t in range(s, e):
            p = perm[t]
            for d in range(3):
                v = pts[p, d]
                if v < lo[node, d]:
                    lo[node, d] = v
                if v > hi[node, d]:
                    hi[node, d] = v
        if e - s <= leaf_size:
            continue
        dim = 0
        spread = hi[node, 0] - lo[node, 0]
        for d in range(1, 3):
            sd = hi[node, d] - lo[node, d]
            if sd > spread:
                spread = sd
                dim = d
        if spread <= 0.0:
            # all points coincide; keep as one leaf
            continue
        mid = (s + e) >> 1
        _select(pts, perm, s, e, mid, dim)
        l = n_nodes
        r = n_nodes + 1
        n_nodes += 2
        start[l] = s
        end[l] = mid
        start[r] = mid
        end[r] = e
        left[node] = l
        right[node] = r
        stack[sp] = l
        stack[sp + 1] = r
        sp += 2
    spts = np.empty((n, 3), np.float64)
    for t in range(n):
        for d in range(3):
            spts[t, d] = pts[perm[t], d]
    return spts, perm, start[:n_nodes].copy(), end[:n_nodes].copy(), left[:n_nodes].copy(), \
        right[:n_nodes].copy(), lo[:n_nodes].copy(), hi[:n_nodes].copy()


@njit(cache=True, inline="always")
def _box_d2(lo, hi, node, q0, q1, q2):
    b0 = 0.0
    if q0 < lo[node, 0]:
        b0 = lo[node, 0] - q0
    elif q0 > hi[node, 0]:
        b0 = q0 - hi[node, 0]
    b1 = 0.0
    if q1 < lo[node, 1]:
        b1 = lo[node, 1] - q1
    elif q1 > hi[node, 1]:
        b1 = q1 - hi[node, 1]
    b2 = 0.0
    if q2 < lo[node, 2]:
        b2 = lo[node, 2] - q2
    elif q2 > hi[node, 2]:
        b2 = q2 - hi[node, 2]
    return (b0 * b0 + b1 * b1) + b2 * b2


@njit(cache=True)
def _query_one(spts, perm, start, end, left, right, lo, hi,
               q0, q1, q2, k, exclude, out_i, out_d, stack):
    """k nearest of (q0, q1, q2) into out_i/out_d (sorted), skipping index ``exclude``."""
    for t in range(k):
        out_d[t] = np.inf
        out_i[t] = -1
    count = 0
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if count == k and _box_d2(lo, hi, node, q0, q1, q2) > out_d[k - 1]:
            continue
        l = left[node]
        if l < 0:
            for t in range(start[node], end[node]):
                p = perm[t]
                if p == exclude:
                    continue
                dx = spts[t, 0] - q0
                dy = spts[t, 1] - q1
                dz = spts[t, 2] - q2
                d2 = (dx * dx + dy * dy) + dz * dz
                if count == k:
                    wd = out_d[k - 1]
                    if d2 > wd or (d2 == wd and p > out_i[k - 1]):
                        continue
                    pos = k - 1
                else:
                    pos = count
                    count += 1
                while pos > 0 and (out_d[pos - 1] > d2 or (out_d[pos - 1] == d2 and out_i[pos - 1] > p)):
                    out_d[pos] = out_d[pos - 1]
                    out_i[pos] = out_i[pos - 1]
                    pos -= 1
                out_d[pos] = d2
                out_i[pos] = p
        else:
            r = right[node]
            dl = _box_d2(lo, hi, l, q0, q1, q2)
            dr = _box_d2(lo, hi, r, q0, q1, q2)
            # push the farther child first so the nearer one is explored next
            if dl <= dr:
                stack[sp] = r
                stack[sp + 1] = l
            else:
                stack[sp] = l
                stack[sp + 1] = r
            sp += 2


@njit(cache=True, parallel=True)
def knn_query(spts, perm, start, end, left, right, lo, hi, queries, k, self_ids):
    """Batch KNN.  ``self_ids[i]`` is excluded from query i's result (-1: none)."""
    m = queries.shape[0]
    out_i = np.empty((m, k), np.int64)
    out_d = np.empty((m, k), np.float64)
    for i in prange(m):
        stack = np.empty(256, np.int64)
        _query_one(spts, perm, start, end, left, right, lo, hi,
                   queries[i, 0], queries[i, 1], queries[i, 2], k, self_ids[i],
                   out_i[i], out_d[i], stack)
    return out_i, out_d


@njit(cache=True, parallel=True)
def knn_self_query(spts, perm, start, end, left, right, lo, hi, k):
    """KNN of every indexed point among the others."""
    m = spts.shape[0]
    out_i = np.empty((m, k), np.int64)
    out_d = np.empty((m, k), np.float64)
    # visiting queries in tree order keeps consecutive searches cache-local
    for t in prange(m):
        i = perm[t]
        stack = np.empty(256, np.int64)
        _query_one(spts, perm, start, end, left, right, lo, hi,
                   spts[t, 0], spts[t, 1], spts[t, 2], k, i, out_i[i], out_d[i], stack)
    return out_i, out_d
