"""Hot convolution kernels with a compiled backend and a numpy fallback.

The compiled module ``aucorr._kernels`` is used when it was built and
``AUCORR_PURE`` is not set. Both backends share one layout and accumulate
in the same order, so they agree bit-for-bit.
"""
import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col_numpy(x, kh, kw, stride):
    n, c, h, w = x.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (n, c, ho, wo, kh, kw) -> (n, c, kh, kw, ho, wo)
    win = win[:, :, :ho, :wo].transpose(0, 1, 4, 5, 2, 3)
    return np.ascontiguousarray(win).reshape(n, c * kh * kw, ho * wo)


def col2im_numpy(cols, c, h, w, kh, kw, stride):
    n = cols.shape[0]
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros((n, c, h, w), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    return out


def _select():
    if os.environ.get("AUCORR_PURE", "") not in ("", "0"):
        return "numpy", im2col_numpy, col2im_numpy
    try:
        from aucorr import _kernels
    except ImportError:
        return "numpy", im2col_numpy, col2im_numpy
    return "cython", _kernels.im2col, _kernels.col2im


BACKEND, _im2col, _col2im = _select()


def im2col(x, kh, kw, stride):
    """Unfold padded ``x`` (n, c, h, w) into (n, c*kh*kw, ho*wo) patch columns."""
    return _im2col(np.ascontiguousarray(x, dtype=np.float64), kh, kw, stride)


def col2im(cols, c, h, w, kh, kw, stride):
    """Adjoint of :func:`im2col`: scatter-add columns back onto a (n, c, h, w) grid."""
    return _col2im(np.ascontiguousarray(cols, dtype=np.float64), c, h, w, kh, kw, stride)
