"""Numba-compiled twins of the kernels in ``_kernels_numpy``.

Same contracts, same arithmetic association order; see the numpy module
for the documented semantics. Compiled lazily with on-disk caching so
repeated test runs skip compilation.
"""

from __future__ import annotations

import numpy as np
from numba import njit

NEG_INF = float("-inf")


@njit(cache=True)
def bilinear_masks(idx, j_size):
    M, T = idx.shape
    w = np.zeros((M, T))
    jm1 = j_size - 1.0
    for m in range(M):
        for t in range(T):
            x = idx[m, t]
            if x <= -1.0 or x >= j_size:
                w[m, t] = 0.0
            elif x < 0.0:
                w[m, t] = 1.0 + x
            elif x <= jm1:
                w[m, t] = 1.0
            else:
                w[m, t] = j_size - x
    return w


@njit(cache=True)
def bilinear_mask_grad(idx, j_size):
    M, T = idx.shape
    g = np.zeros((M, T))
    jm1 = j_size - 1.0
    for m in range(M):
        for t in range(T):
            x = idx[m, t]
            if x > -1.0 and x <= 0.0:
                g[m, t] = 1.0
            elif x > jm1 and x <= j_size:
                g[m, t] = -1.0
    return g


@njit(cache=True)
def dp_best_lengths(frame_prefix, log_poisson):
    M = frame_prefix.shape[0]
    T = frame_prefix.shape[1] - 1
    suf = np.full((M + 1, T + 1), NEG_INF)
    suf[M, T] = 0.0
    choice = np.zeros((M, T + 1), dtype=np.int64)
    for m in range(M - 1, -1, -1):
        rem = M - 1 - m
        for t in range(m, T - rem):
            best = NEG_INF
            best_len = 0
            max_len = T - rem - t
            for seg_len in range(1, max_len + 1):
                u = t + seg_len
                v = (
                    log_poisson[m, seg_len]
                    + frame_prefix[m, u]
                    - frame_prefix[m, t]
                    + suf[m + 1, u]
                )
                if v > best:
                    best = v
                    best_len = seg_len
            suf[m, t] = best
            choice[m, t] = best_len
    lengths = np.zeros(M, dtype=np.int64)
    t = 0
    for m in range(M):
        lengths[m] = choice[m, t]
        t += int(lengths[m])
    return lengths, float(suf[0, 0])
