"""Numba kernels for the per-frame raster hot paths (priority-flood watershed,
geodesic shortest paths).

Both kernels use explicit array-based binary heaps so that the dequeue order is
fully specified: the watershed pops strictly by decreasing landscape value with
ties broken by raster-scan index, which keeps results identical across runs and
platforms.
"""

from __future__ import annotations

import numpy as np
from numba import njit

SQRT2 = np.sqrt(2.0)


@njit(cache=True, nogil=True)
def _heap_push(vals, ties, pix, size, v, t, p):
    i = size
    vals[i] = v
    ties[i] = t
    pix[i] = p
    # sift up: max-heap on value, min on tie for equal values
    while i > 0:
        parent = (i - 1) >> 1
        vp = vals[parent]
        tp = ties[parent]
        if v > vp or (v == vp and t < tp):
            vals[i] = vp
            ties[i] = tp
            pix[i] = pix[parent]
            vals[parent] = v
            ties[parent] = t
            pix[parent] = p
            i = parent
        else:
            break
    return size + 1


@njit(cache=True, nogil=True)
def _heap_pop(vals, ties, pix, size):
    v0 = vals[0]
    t0 = ties[0]
    p0 = pix[0]
    size -= 1
    if size > 0:
        v = vals[size]
        t = ties[size]
        p = pix[size]
        i = 0
        while True:
            left = 2 * i + 1
            if left >= size:
                break
            best = left
            right = left + 1
            if right < size:
                vl, tl = vals[left], ties[left]
                vr, tr = vals[right], ties[right]
                if vr > vl or (vr == vl and tr < tl):
                    best = right
            vb, tb = vals[best], ties[best]
            if vb > v or (vb == v and tb < t):
                vals[i] = vb
                ties[i] = tb
                pix[i] = pix[best]
                i = best
            else:
                break
        vals[i] = v
        ties[i] = t
        pix[i] = p
    return v0, t0, p0, size


@njit(cache=True, nogil=True)
def watershed_flood(landscape, labels, mask):
    """Priority flood from the nonzero entries of ``labels`` over ``mask``.

    Pixels are dequeued in decreasing landscape order (ties by raster-scan
    index of the dequeued pixel) and claim their unlabeled 4-neighbors.
    ``labels`` is modified in place.
    """
    h, w = landscape.shape
    n = 0
    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                n += 1
    cap = n + 1
    vals = np.empty(cap, np.float64)
    ties = np.empty(cap, np.int64)
    pix = np.empty(cap, np.int64)
    size = 0
    for y in range(h):
        for x in range(w):
            if labels[y, x] > 0 and mask[y, x]:
                p = y * w + x
                size = _heap_push(vals, ties, pix, size, landscape[y, x], p, p)
    while size > 0:
        _, _, p, size = _heap_pop(vals, ties, pix, size)
        y = p // w
        x = p - y * w
        lab = labels[y, x]
        if y > 0 and mask[y - 1, x] and labels[y - 1, x] == 0:
            labels[y - 1, x] = lab
            q = p - w
            size = _heap_push(vals, ties, pix, size, landscape[y - 1, x], q, q)
        if y + 1 < h and mask[y + 1, x] and labels[y + 1, x] == 0:
            labels[y + 1, x] = lab
            q = p + w
            size = _heap_push(vals, ties, pix, size, landscape[y + 1, x], q, q)
        if x > 0 and mask[y, x - 1] and labels[y, x - 1] == 0:
            labels[y, x - 1] = lab
            q = p - 1
            size = _heap_push(vals, ties, pix, size, landscape[y, x - 1], q, q)
        if x + 1 < w and mask[y, x + 1] and labels[y, x + 1] == 0:
            labels[y, x + 1] = lab
            q = p + 1
            size = _heap_push(vals, ties, pix, size, landscape[y, x + 1], q, q)


@njit(cache=True, nogil=True)
def geodesic_steps(mask, sy, sx):
    """Dijkstra over the 8-connected pixel graph of ``mask`` from (sy, sx).

    Distances are tracked as exact step counts (axial, diagonal) so the value
    ``a + b*sqrt(2)`` is canonical: no float accumulation order can change it.
    Returns two int32 arrays (axial counts, diagonal counts), -1 outside the
    reachable region.
    """
    h, w = mask.shape
    ax = np.full((h, w), -1, np.int32)
    dg = np.full((h, w), -1, np.int32)
    cap = 8 * h * w + 8
    vals = np.empty(cap, np.float64)
    ties = np.empty(cap, np.int64)
    pix = np.empty(cap, np.int64)
    size = 0
    ax[sy, sx] = 0
    dg[sy, sx] = 0
    # min-heap by value: negate for the shared max-heap helpers
    size = _heap_push(vals, ties, pix, size, 0.0, sy * w + sx, sy * w + sx)
    while size > 0:
        v, _, p, size = _heap_pop(vals, ties, pix, size)
        v = -v
        y = p // w
        x = p - y * w
        a = ax[y, x]
        b = dg[y, x]
        if v > a + b * SQRT2:  # stale entry
            continue
        for dy in range(-1, 2):
            ny = y + dy
            if ny < 0 or ny >= h:
                continue
            for dx in range(-1, 2):
                if dy == 0 and dx == 0:
                    continue
                nx = x + dx
                if nx < 0 or nx >= w or not mask[ny, nx]:
                    continue
                if dy == 0 or dx == 0:
                    na, nb = a + 1, b
                else:
                    na, nb = a, b + 1
                nv = na + nb * SQRT2
                oa, ob = ax[ny, nx], dg[ny, nx]
                if oa < 0 or nv < oa + ob * SQRT2:
                    ax[ny, nx] = na
                    dg[ny, nx] = nb
                    q = ny * w + nx
                    size = _heap_push(vals, ties, pix, size, -nv, q, q)
    return ax, dg


def warmup():
    """Force JIT compilation of the kernels on tiny inputs."""
    land = np.ones((3, 3), np.float64)
    lab = np.zeros((3, 3), np.int32)
    lab[1, 1] = 1
    watershed_flood(land, lab, np.ones((3, 3), np.bool_))
    geodesic_steps(np.ones((3, 3), np.bool_), 1, 1)
