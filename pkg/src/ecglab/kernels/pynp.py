"""Pure-numpy kernel implementations.

These mirror the compiled kernels in ``_fast`` and serve as the fallback
when the extension is unavailable. Convolutions are lowered to a single
batched matmul over gathered taps, which keeps the heavy lifting in BLAS.
The DTW recurrence is vectorized along anti-diagonals.

All conv kernels operate on the already-padded input ``xp``; the public
wrappers in ``ecglab.kernels`` own padding and shape checks.
"""

import numpy as np


def _gather_cols(xp, ksize, lout, stride, dilation):
    # (B, Ci, K, Lo) view-copies of the input taps
    b, ci, _ = xp.shape
    cols = np.empty((b, ci, ksize, lout), dtype=xp.dtype)
    span = (lout - 1) * stride + 1
    for k in range(ksize):
        start = k * dilation
        cols[:, :, k, :] = xp[:, :, start : start + span : stride]
    return cols


def conv1d_fwd(xp, w, bias, lout, stride, dilation):
    b = xp.shape[0]
    co, ci, k = w.shape
    cols = _gather_cols(xp, k, lout, stride, dilation)
    y = np.matmul(w.reshape(co, ci * k), cols.reshape(b, ci * k, lout))
    y += bias[None, :, None]
    return y


def conv1d_bwd_input(gy, w, xp_shape, stride, dilation):
    b, co, lout = gy.shape
    _, ci, k = w.shape
    gcols = np.matmul(w.reshape(co, ci * k).T, gy)
    gcols = gcols.reshape(b, ci, k, lout)
    gxp = np.zeros(xp_shape, dtype=gy.dtype)
    span = (lout - 1) * stride + 1
    for tap in range(k):
        start = tap * dilation
        gxp[:, :, start : start + span : stride] += gcols[:, :, tap, :]
    return gxp


def conv1d_bwd_weight(gy, xp, wshape, stride, dilation):
    b, co, lout = gy.shape
    _, ci, k = wshape
    cols = _gather_cols(xp, k, lout, stride, dilation)
    gw = np.matmul(gy, cols.reshape(b, ci * k, lout).transpose(0, 2, 1)).sum(axis=0)
    gb = gy.sum(axis=(0, 2))
    return gw.reshape(co, ci, k), gb


def dtw(a, b):
    """Unconstrained DTW distance between 1D sequences, |a_i - b_j| cost."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, m = a.shape[0], b.shape[0]
    if n == 0 or m == 0:
        raise ValueError("dtw: empty sequence")
    cost = np.abs(a[:, None] - b[None, :])
    inf = np.inf
    dprev2 = np.full(n, inf)
    dprev = np.full(n, inf)
    for t in range(n + m - 1):
        i0 = max(0, t - m + 1)
        i1 = min(n - 1, t)
        idx = np.arange(i0, i1 + 1)
        c = cost[idx, t - idx]
        dcur = np.full(n, inf)
        if t == 0:
            dcur[0] = c[0]
        else:
            im1 = np.maximum(idx - 1, 0)
            up = np.where(idx > 0, dprev[im1], inf)
            diag = np.where(idx > 0, dprev2[im1], inf)
            left = dprev[idx]
            dcur[idx] = c + np.minimum(np.minimum(up, left), diag)
        dprev2, dprev = dprev, dcur
    return float(dprev[n - 1])
