"""Compiled kernels for the tube dynamic program on scalar curves.

Value functions live on the lattice ``qZ``.  A transition is the min-plus
convolution of the previous value function with the per-step cost ``w``;
both are convex, so the result is produced by merging their increments.
The merge always reports an attainable cost, so a ``True`` answer is never
spurious even when rounding perturbs convexity.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _feasible(g, delta, q, k_lo, w, a, fbuf, hbuf):
    budget = a + 1e-12
    K = w.shape[0]
    fbuf[0] = 0.0
    flen = 1
    f_lo = 0
    N = g.shape[0] - 1
    for j in range(1, N + 1):
        L = math.ceil((g[j] - delta) / q - 1e-9)
        U = math.floor((g[j] + delta) / q + 1e-9)
        h_lo = f_lo + k_lo
        hlen = flen + K - 1
        i0 = L - h_lo
        if i0 < 0:
            i0 = 0
        i1 = U - h_lo
        if i1 > hlen - 1:
            i1 = hlen - 1
        if i0 > i1:
            return False
        hbuf[0] = fbuf[0] + w[0]
        pf = 0
        pw = 0
        for i in range(1, i1 + 1):
            if pf < flen - 1:
                df = fbuf[pf + 1] - fbuf[pf]
            else:
                df = np.inf
            if pw < K - 1:
                dw = w[pw + 1] - w[pw]
            else:
                dw = np.inf
            if df <= dw:
                pf += 1
                hbuf[i] = hbuf[i - 1] + df
            else:
                pw += 1
                hbuf[i] = hbuf[i - 1] + dw
        best = np.inf
        for i in range(i0, i1 + 1):
            v = hbuf[i]
            fbuf[i - i0] = v
            if v < best:
                best = v
        flen = i1 - i0 + 1
        f_lo = h_lo + i0
        if best > budget:
            return False
    return True


def _buffers(g_max, delta_max, q, K):
    size = int(2 * (delta_max + g_max) / q) + K + 8
    return np.empty(size), np.empty(size)


def tube_feasible(g, delta, q, k_lo, w, a):
    g = np.ascontiguousarray(g, dtype=np.float64)
    fbuf, hbuf = _buffers(float(np.max(np.abs(g))), delta, q, w.shape[0])
    return bool(_feasible(g, float(delta), float(q), int(k_lo), w, float(a), fbuf, hbuf))


@njit(cache=True, nogil=True)
def _feasible_batch(G, delta, q, k_lo, w, a, fbuf, hbuf):
    out = np.empty(G.shape[0], dtype=np.bool_)
    for b in range(G.shape[0]):
        out[b] = _feasible(G[b], delta, q, k_lo, w, a, fbuf, hbuf)
    return out


def tube_feasible_batch(G, delta, q, k_lo, w, a):
    G = np.ascontiguousarray(G, dtype=np.float64)
    if G.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    fbuf, hbuf = _buffers(float(np.max(np.abs(G))), delta, q, w.shape[0])
    return _feasible_batch(G, float(delta), float(q), int(k_lo), w, float(a), fbuf, hbuf)


@njit(cache=True, nogil=True)
def _bisect(g, lo, hi, width, q, k_lo, w, a, fbuf, hbuf):
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if _feasible(g, mid, q, k_lo, w, a, fbuf, hbuf):
            hi = mid
        else:
            lo = mid
    return hi


def tube_distance(g, lo, hi, width, q, k_lo, w, a):
    g = np.ascontiguousarray(g, dtype=np.float64)
    fbuf, hbuf = _buffers(float(np.max(np.abs(g))), hi, q, w.shape[0])
    return float(_bisect(g, float(lo), float(hi), float(width), float(q), int(k_lo), w, float(a), fbuf, hbuf))


@njit(cache=True, nogil=True)
def _max_scan(G, order, ub, best, arg, width, q, k_lo, w, a, fbuf, hbuf):
    solves = 0
    for t in range(order.shape[0]):
        i = order[t]
        if ub[i] <= best:
            continue
        solves += 1
        if _feasible(G[i], best, q, k_lo, w, a, fbuf, hbuf):
            continue
        d = _bisect(G[i], best, ub[i], width, q, k_lo, w, a, fbuf, hbuf)
        if d > best:
            best = d
            arg = i
    return best, arg, solves


def max_scan(G, order, ub, best, arg, width, q, k_lo, w, a):
    """Running maximum of tube distances over ``G[order]``, skipping rows certified by ``ub``."""
    G = np.ascontiguousarray(G, dtype=np.float64)
    fbuf, hbuf = _buffers(float(np.max(np.abs(G))), float(np.max(ub)), q, w.shape[0])
    best, arg, solves = _max_scan(G, np.ascontiguousarray(order, dtype=np.int64), np.ascontiguousarray(ub),
                                  float(best), int(arg), float(width), float(q), int(k_lo), w, float(a),
                                  fbuf, hbuf)
    return float(best), int(arg), int(solves)
