"""Kernel dispatch: compiled extension when available, numpy otherwise.

The active backend is chosen at import time. ``ECGLAB_BACKEND`` overrides:

* ``auto`` (default): use the extension if it built, but route large
  convolutions to the BLAS-backed fallback, which wins once the per-output
  work ``Ci*Co*K`` is big enough to amortize the matmul setup.
* ``fast``: always use the extension; error if it is missing.
* ``numpy``: never touch the extension.

Public wrappers own validation and padding; see ``pynp`` for the reference
implementations.
"""

import os

import numpy as np

from ..errors import ConfigError, ShapeError
from . import pynp

try:
    from . import _fast
except ImportError:
    _fast = None

_MODE = os.environ.get("ECGLAB_BACKEND", "auto").lower()
if _MODE not in ("auto", "fast", "numpy"):
    raise ConfigError(f"ECGLAB_BACKEND must be auto, fast or numpy, got {_MODE!r}")
if _MODE == "fast" and _fast is None:
    raise ConfigError("ECGLAB_BACKEND=fast but the compiled extension is not built")
if _MODE == "auto" and _fast is None:
    _MODE = "numpy"

# Above this Ci*Co*K the batched-matmul lowering beats the scalar loops
# (calibrated with benchmarks/bench_kernels.py; see README).
FAST_CONV_WORK_LIMIT = 3072


def backend():
    """Name of the active backend: 'fast' or 'numpy'."""
    return "numpy" if _MODE == "numpy" else "fast"


def has_fast():
    return _fast is not None


def _check_conv_args(ci_x, w, stride, dilation):
    if w.ndim != 3:
        raise ShapeError(f"conv1d weight must be 3D (Co,Ci,K), got {w.shape}")
    co, ci, k = w.shape
    if ci != ci_x:
        raise ShapeError(f"conv1d: input has {ci_x} channels, weight expects {ci}")
    if k % 2 == 0:
        raise ShapeError(f"conv1d kernel size must be odd, got {k}")
    if stride < 1 or dilation < 1:
        raise ConfigError(f"conv1d stride/dilation must be >= 1, got {stride}/{dilation}")


def _pad(x, k, dilation):
    p = (k - 1) * dilation // 2
    if p == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (p, p)))


def _use_fast(co, ci, k):
    if _MODE == "fast":
        return True
    return _MODE == "auto" and ci * co * k <= FAST_CONV_WORK_LIMIT


def _common_dtype(*arrays):
    # mixed f32/f64 operands would make the two backends disagree (the numpy
    # path upcasts, the compiled one rejects), so promote before dispatch
    ct = np.result_type(*arrays)
    return tuple(a if a.dtype == ct else a.astype(ct) for a in arrays)


def conv1d_forward(x, w, b, stride=1, dilation=1):
    """Same-padded 1D convolution; output length is ceil(L/stride)."""
    if x.ndim != 3:
        raise ShapeError(f"conv1d input must be 3D (B,Ci,L), got {x.shape}")
    _check_conv_args(x.shape[1], w, stride, dilation)
    x, w, b = _common_dtype(x, w, b)
    co, ci, k = w.shape
    lo = -(-x.shape[2] // stride)
    xp = _pad(x, k, dilation)
    if _use_fast(co, ci, k):
        y = np.empty((x.shape[0], co, lo), dtype=x.dtype)
        _fast.conv1d_fwd(xp, np.ascontiguousarray(w), np.ascontiguousarray(b),
                         y, stride, dilation)
        return y
    return pynp.conv1d_fwd(xp, w, b, lo, stride, dilation)


def conv1d_backward_input(gy, w, x_shape, stride=1, dilation=1):
    """Gradient of conv1d_forward w.r.t. its input."""
    gy, w = _common_dtype(gy, w)
    co, ci, k = w.shape
    p = (k - 1) * dilation // 2
    xp_shape = (x_shape[0], x_shape[1], x_shape[2] + 2 * p)
    if _use_fast(co, ci, k):
        gxp = np.zeros(xp_shape, dtype=gy.dtype)
        _fast.conv1d_bwd_input(np.ascontiguousarray(gy), np.ascontiguousarray(w),
                               gxp, stride, dilation)
    else:
        gxp = pynp.conv1d_bwd_input(gy, w, xp_shape, stride, dilation)
    if p == 0:
        return gxp
    return gxp[:, :, p : p + x_shape[2]]


def conv1d_backward_weight(gy, x, w_shape, stride=1, dilation=1):
    """Gradients of conv1d_forward w.r.t. weight and bias."""
    gy, x = _common_dtype(gy, x)
    co, ci, k = w_shape
    xp = _pad(x, k, dilation)
    if _use_fast(co, ci, k):
        gw = np.zeros(w_shape, dtype=gy.dtype)
        gb = np.zeros(co, dtype=gy.dtype)
        _fast.conv1d_bwd_weight(np.ascontiguousarray(gy), xp, gw, gb, stride, dilation)
        return gw, gb
    return pynp.conv1d_bwd_weight(np.ascontiguousarray(gy), xp, w_shape, stride, dilation)


def dtw_distance(a, b):
    """DTW distance between two 1D sequences under |a_i - b_j| cost."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeError("dtw_distance expects 1D sequences")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ShapeError("dtw_distance: empty sequence")
    if _MODE == "numpy":
        return pynp.dtw(a, b)
    return _fast.dtw(np.ascontiguousarray(a, dtype=np.float64),
                     np.ascontiguousarray(b, dtype=np.float64))
