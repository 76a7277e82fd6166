# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled scalar kernels: 1D convolution passes and DTW.

The conv kernels beat the BLAS-backed fallback when the per-output work
(Ci*Co*K) is small, i.e. the narrow early layers; the DTW kernel wins
always since the DP is inherently sequential. Loops release the GIL so
callers can thread over independent problems.
"""

from libc.math cimport fabs

import numpy as np


ctypedef fused real:
    float
    double


def conv1d_fwd(real[:, :, ::1] xp, real[:, :, ::1] w, real[::1] bias,
               real[:, :, ::1] y, Py_ssize_t stride, Py_ssize_t dilation):
    cdef Py_ssize_t nb = xp.shape[0], ci = xp.shape[1]
    cdef Py_ssize_t co = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t lo = y.shape[2]
    cdef Py_ssize_t b, o, c, t, l, base
    cdef double acc
    with nogil:
        for b in range(nb):
            for o in range(co):
                for l in range(lo):
                    base = l * stride
                    acc = bias[o]
                    for c in range(ci):
                        for t in range(k):
                            acc = acc + w[o, c, t] * xp[b, c, base + t * dilation]
                    y[b, o, l] = <real> acc


def conv1d_bwd_input(real[:, :, ::1] gy, real[:, :, ::1] w,
                     real[:, :, ::1] gxp, Py_ssize_t stride, Py_ssize_t dilation):
    cdef Py_ssize_t nb = gy.shape[0], co = gy.shape[1], lo = gy.shape[2]
    cdef Py_ssize_t ci = w.shape[1], k = w.shape[2]
    cdef Py_ssize_t b, o, c, t, l, base
    cdef real g
    with nogil:
        for b in range(nb):
            for o in range(co):
                for l in range(lo):
                    g = gy[b, o, l]
                    base = l * stride
                    for c in range(ci):
                        for t in range(k):
                            gxp[b, c, base + t * dilation] += g * w[o, c, t]


def conv1d_bwd_weight(real[:, :, ::1] gy, real[:, :, ::1] xp,
                      real[:, :, ::1] gw, real[::1] gb,
                      Py_ssize_t stride, Py_ssize_t dilation):
    cdef Py_ssize_t nb = gy.shape[0], co = gy.shape[1], lo = gy.shape[2]
    cdef Py_ssize_t ci = gw.shape[1], k = gw.shape[2]
    cdef Py_ssize_t b, o, c, t, l, base
    cdef real g
    with nogil:
        for b in range(nb):
            for o in range(co):
                for l in range(lo):
                    g = gy[b, o, l]
                    base = l * stride
                    gb[o] += g
                    for c in range(ci):
                        for t in range(k):
                            gw[o, c, t] += g * xp[b, c, base + t * dilation]


def dtw(real[::1] a, real[::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0]
    if n == 0 or m == 0:
        raise ValueError("dtw: empty sequence")
    buf = np.empty((2, m), dtype=np.float64)
    cdef double[:, ::1] rows = buf
    cdef Py_ssize_t i, j, cur = 0, prev = 1
    cdef double c, best
    with nogil:
        rows[0, 0] = fabs(<double> a[0] - <double> b[0])
        for j in range(1, m):
            rows[0, j] = rows[0, j - 1] + fabs(<double> a[0] - <double> b[j])
        for i in range(1, n):
            cur = i & 1
            prev = 1 - cur
            rows[cur, 0] = rows[prev, 0] + fabs(<double> a[i] - <double> b[0])
            for j in range(1, m):
                c = fabs(<double> a[i] - <double> b[j])
                best = rows[prev, j]
                if rows[cur, j - 1] < best:
                    best = rows[cur, j - 1]
                if rows[prev, j - 1] < best:
                    best = rows[prev, j - 1]
                rows[cur, j] = c + best
    return float(rows[(n - 1) & 1, m - 1])
