# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im loops used by conv2d.

Inputs are already zero padded. Layout: cols[n, (c*kh + i)*kw + j, y*wo + x].
"""
import numpy as np


def im2col(const double[:, :, :, ::1] x, int kh, int kw, int stride):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t c = x.shape[1]
    cdef Py_ssize_t h = x.shape[2]
    cdef Py_ssize_t w = x.shape[3]
    cdef Py_ssize_t ho = (h - kh) // stride + 1
    cdef Py_ssize_t wo = (w - kw) // stride + 1
    out = np.empty((n, c * kh * kw, ho * wo), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t b, ch, i, j, y, xx, row, iy
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for y in range(ho):
                        iy = y * stride + i
                        for xx in range(wo):
                            o[b, row, y * wo + xx] = x[b, ch, iy, xx * stride + j]
    return out


def col2im(const double[:, :, ::1] cols, Py_ssize_t c, Py_ssize_t h, Py_ssize_t w,
           int kh, int kw, int stride):
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t ho = (h - kh) // stride + 1
    cdef Py_ssize_t wo = (w - kw) // stride + 1
    out = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, ch, i, j, y, xx, row, iy
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for y in range(ho):
                        iy = y * stride + i
                        for xx in range(wo):
                            o[b, ch, iy, xx * stride + j] += cols[b, row, y * wo + xx]
    return out
