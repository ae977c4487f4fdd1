"""Pure-numpy implementations of the hot kernels.

These are the fallback path selected by ``MUCON_BACKEND=numpy`` and the
reference semantics for the numba twins in ``_kernels_numba``. Both
backends must produce bitwise-identical results; arithmetic is written in
the same association order in both files on purpose.
"""

from __future__ import annotations

import numpy as np

NEG_INF = float("-inf")


def bilinear_masks(idx: np.ndarray, j_size: int) -> np.ndarray:
    """Evaluate the summed bilinear kernel of an all-ones template.

    ``idx`` holds sampling positions in template index coordinates, shape
    (M, T). Summing max(0, 1-|idx-j|) over template cells j = 0..j_size-1
    collapses to a trapezoid: a unit plateau on [0, j_size-1] with linear
    ramps of width 1 on both sides. The plateau is emitted as exactly 1.0
    rather than as a sum of two partial weights so interior frames are
    exact.
    """
    jm1 = float(j_size - 1)
    w = np.zeros_like(idx)
    left = (idx > -1.0) & (idx < 0.0)
    w[left] = 1.0 + idx[left]
    w[(idx >= 0.0) & (idx <= jm1)] = 1.0
    right = (idx > jm1) & (idx < float(j_size))
    w[right] = float(j_size) - idx[right]
    return w


def bilinear_mask_grad(idx: np.ndarray, j_size: int) -> np.ndarray:
    """Derivative of ``bilinear_masks`` w.r.t. the sampling index.

    +1 on the rising ramp, -1 on the falling ramp, 0 on the plateau and
    outside. At the four kinks (-1, 0, j_size-1, j_size) the value
    approached from the left is used, so the half-open intervals here are
    (-1, 0] -> +1 and (j_size-1, j_size] -> -1.
    """
    jm1 = float(j_size - 1)
    g = np.zeros_like(idx)
    g[(idx > -1.0) & (idx <= 0.0)] = 1.0
    g[(idx > jm1) & (idx <= float(j_size))] = -1.0
    return g


def dp_best_lengths(frame_prefix: np.ndarray, log_poisson: np.ndarray):
    """Best integer segment lengths by dynamic programming.

    frame_prefix: (M, T+1) prefix sums; frame_prefix[m, u] is the summed
        per-frame log-probability of segment m's action over frames < u.
    log_poisson: (M, T+1) length prior; log_poisson[m, l] scores length l.
        Column 0 is a placeholder and never read.

    Maximizes sum_m frame_prefix[m, u_m] - frame_prefix[m, t_m]
    + log_poisson[m, u_m - t_m] over all length-M compositions of T into
    positive parts. Among equal-score solutions the lexicographically
    smallest length vector is returned (ascending length scan with a
    strictly-greater update; first argmax wins).

    Returns (lengths int64 (M,), score float).
    """
    M, tp1 = frame_prefix.shape
    T = tp1 - 1
    t_idx = np.arange(T + 1)
    suf = np.full((M + 1, T + 1), NEG_INF)
    suf[M, T] = 0.0
    choice = np.zeros((M, T + 1), dtype=np.int64)
    for m in range(M - 1, -1, -1):
        rem = M - 1 - m
        seg_len = t_idx[None, :] - t_idx[:, None]
        valid = (seg_len >= 1) & (t_idx[None, :] <= T - rem) & (t_idx[:, None] >= m)
        len_c = np.clip(seg_len, 0, T)
        vals = (
            log_poisson[m, len_c]
            + frame_prefix[m][None, :]
            - frame_prefix[m][:, None]
            + suf[m + 1][None, :]
        )
        vals = np.where(valid, vals, NEG_INF)
        suf[m] = vals.max(axis=1)
        choice[m] = vals.argmax(axis=1) - t_idx
    lengths = np.zeros(M, dtype=np.int64)
    t = 0
    for m in range(M):
        lengths[m] = choice[m, t]
        t += int(lengths[m])
    return lengths, float(suf[0, 0])
