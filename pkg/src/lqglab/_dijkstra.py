"""Numba kernels for shortest paths on weighted 8-neighbor grids.

Vertices are cells of an n x n grid, flat index u = j * n + k.  Edge cost
between neighbors is euclidean_length * (w[u] + w[v]) / 2 with length delta
on the axes and delta * sqrt(2) on the diagonals.

All kernels use a manual binary heap (lazy deletion) and are deterministic
for a fixed input: neighbor order and tie handling are fixed.
"""

import math

import numpy as np
from numba import njit

_SQRT2 = math.sqrt(2.0)


@njit(cache=True, nogil=True, inline="always")
def _heap_up(hd, hv, i):
    while i > 0:
        p = (i - 1) >> 1
        if hd[i] < hd[p]:
            hd[i], hd[p] = hd[p], hd[i]
            hv[i], hv[p] = hv[p], hv[i]
            i = p
        else:
            break


@njit(cache=True, nogil=True, inline="always")
def _heap_down(hd, hv, size):
    i = 0
    while True:
        l = 2 * i + 1
        if l >= size:
            break
        r = l + 1
        c = l
        if r < size and hd[r] < hd[l]:
            c = r
        if hd[c] < hd[i]:
            hd[i], hd[c] = hd[c], hd[i]
            hv[i], hv[c] = hv[c], hv[i]
            i = c
        else:
            break


@njit(cache=True, nogil=True)
def dijkstra(w, n, delta, sources, limit, mask, use_mask, want_pred):
    """Multi-source Dijkstra; entries with distance > limit are left at inf.

    w: flat vertex weights (n*n,); sources: flat indices; mask: flat bool
    (only used when use_mask); returns (dist, pred) flat arrays.
    """
    nn = n * n
    dist = np.full(nn, np.inf)
    pred = np.full(nn, -1, np.int64)
    done = np.zeros(nn, np.bool_)
    cap = 4 * nn + 16
    hd = np.empty(cap, np.float64)
    hv = np.empty(cap, np.int64)
    size = 0
    for s in sources:
        if use_mask and not mask[s]:
            continue
        dist[s] = 0.0
        hd[size] = 0.0
        hv[size] = s
        size += 1
        _heap_up(hd, hv, size - 1)
    while size > 0:
        d = hd[0]
        u = hv[0]
        size -= 1
        hd[0] = hd[size]
        hv[0] = hv[size]
        _heap_down(hd, hv, size)
        if done[u] or d > dist[u]:
            continue
        if d > limit:
            break
        done[u] = True
        ju = u // n
        ku = u - ju * n
        wu = w[u]
        for m in range(8):
            if m == 0:
                dj, dk, el = 1, 0, delta
            elif m == 1:
                dj, dk, el = -1, 0, delta
            elif m == 2:
                dj, dk, el = 0, 1, delta
            elif m == 3:
                dj, dk, el = 0, -1, delta
            elif m == 4:
                dj, dk, el = 1, 1, delta * _SQRT2
            elif m == 5:
                dj, dk, el = 1, -1, delta * _SQRT2
            elif m == 6:
                dj, dk, el = -1, 1, delta * _SQRT2
            else:
                dj, dk, el = -1, -1, delta * _SQRT2
            jv = ju + dj
            kv = ku + dk
            if jv < 0 or jv >= n or kv < 0 or kv >= n:
                continue
            v = jv * n + kv
            if done[v] or (use_mask and not mask[v]):
                continue
            nd = d + el * 0.5 * (wu + w[v])
            if nd < dist[v]:
                dist[v] = nd
                if want_pred:
                    pred[v] = u
                if size == cap:
                    new_cap = 2 * cap
                    nhd = np.empty(new_cap, np.float64)
                    nhv = np.empty(new_cap, np.int64)
                    nhd[:size] = hd
                    nhv[:size] = hv
                    hd = nhd
                    hv = nhv
                    cap = new_cap
                hd[size] = nd
                hv[size] = v
                size += 1
                _heap_up(hd, hv, size - 1)
    if limit < np.inf:
        for u in range(nn):
            if dist[u] > limit:
                dist[u] = np.inf
                pred[u] = -1
    return dist, pred


@njit(cache=True, nogil=True)
def dijkstra_to_target(w, n, delta, source, target, mask, use_mask):
    """Single-pair distance with early exit at the target (inf if unreached)."""
    nn = n * n
    dist = np.full(nn, np.inf)
    done = np.zeros(nn, np.bool_)
    cap = nn + 16
    hd = np.empty(cap, np.float64)
    hv = np.empty(cap, np.int64)
    if use_mask and (not mask[source] or not mask[target]):
        return np.inf
    dist[source] = 0.0
    hd[0] = 0.0
    hv[0] = source
    size = 1
    while size > 0:
        d = hd[0]
        u = hv[0]
        size -= 1
        hd[0] = hd[size]
        hv[0] = hv[size]
        _heap_down(hd, hv, size)
        if done[u] or d > dist[u]:
            continue
        if u == target:
            return d
        done[u] = True
        ju = u // n
        ku = u - ju * n
        wu = w[u]
        for m in range(8):
            if m == 0:
                dj, dk, el = 1, 0, delta
            elif m == 1:
                dj, dk, el = -1, 0, delta
            elif m == 2:
                dj, dk, el = 0, 1, delta
            elif m == 3:
                dj, dk, el = 0, -1, delta
            elif m == 4:
                dj, dk, el = 1, 1, delta * _SQRT2
            elif m == 5:
                dj, dk, el = 1, -1, delta * _SQRT2
            elif m == 6:
                dj, dk, el = -1, 1, delta * _SQRT2
            else:
                dj, dk, el = -1, -1, delta * _SQRT2
            jv = ju + dj
            kv = ku + dk
            if jv < 0 or jv >= n or kv < 0 or kv >= n:
                continue
            v = jv * n + kv
            if done[v] or (use_mask and not mask[v]):
                continue
            nd = d + el * 0.5 * (wu + w[v])
            if nd < dist[v]:
                dist[v] = nd
                if size == cap:
                    new_cap = 2 * cap
                    nhd = np.empty(new_cap, np.float64)
                    nhv = np.empty(new_cap, np.int64)
                    nhd[:size] = hd
                    nhv[:size] = hv
                    hd = nhd
                    hv = nhv
                    cap = new_cap
                hd[size] = nd
                hv[size] = v
                size += 1
                _heap_up(hd, hv, size - 1)
    return np.inf


@njit(cache=True, nogil=True)
def lower_best(w, n, delta, best, center, cap_limit):
    """Relax best[] (distance to a center set) after inserting one center.

    Runs Dijkstra from ``center`` pruned wherever the popped distance is
    already no better than best[] (best is 1-Lipschitz along edges, so no
    improvement can pass through such a cell), and capped at cap_limit.
    Mutates best in place.
    """
    nn = n * n
    cap = nn + 16
    hd = np.empty(cap, np.float64)
    hv = np.empty(cap, np.int64)
    hd[0] = 0.0
    hv[0] = center
    size = 1
    while size > 0:
        d = hd[0]
        u = hv[0]
        size -= 1
        hd[0] = hd[size]
        hv[0] = hv[size]
        _heap_down(hd, hv, size)
        if d >= best[u] or d > cap_limit:
            continue
        best[u] = d
        ju = u // n
        ku = u - ju * n
        wu = w[u]
        for m in range(8):
            if m == 0:
                dj, dk, el = 1, 0, delta
            elif m == 1:
                dj, dk, el = -1, 0, delta
            elif m == 2:
                dj, dk, el = 0, 1, delta
            elif m == 3:
                dj, dk, el = 0, -1, delta
            elif m == 4:
                dj, dk, el = 1, 1, delta * _SQRT2
            elif m == 5:
                dj, dk, el = 1, -1, delta * _SQRT2
            elif m == 6:
                dj, dk, el = -1, 1, delta * _SQRT2
            else:
                dj, dk, el = -1, -1, delta * _SQRT2
            jv = ju + dj
            kv = ku + dk
            if jv < 0 or jv >= n or kv < 0 or kv >= n:
                continue
            v = jv * n + kv
            nd = d + el * 0.5 * (wu + w[v])
            if nd < best[v] and nd <= cap_limit:
                if size == cap:
                    new_cap = 2 * cap
                    nhd = np.empty(new_cap, np.float64)
                    nhv = np.empty(new_cap, np.int64)
                    nhd[:size] = hd
                    nhv[:size] = hv
                    hd = nhd
                    hv = nhv
                    cap = new_cap
                hd[size] = nd
                hv[size] = v
                size += 1
                _heap_up(hd, hv, size - 1)
