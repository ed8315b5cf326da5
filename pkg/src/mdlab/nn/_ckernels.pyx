# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels`` (same signatures and results)."""

import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def im2col3x3(const floating[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((n, h, w, 9 * c), dtype=dtype)
    cdef floating[:, :, :, ::1] cols = out
    cdef Py_ssize_t b, i, j, dy, dx, ii, jj, k, ch, base
    with nogil:
        for b in range(n):
            for i in range(h):
                for j in range(w):
                    for dy in range(3):
                        ii = i + dy - 1
                        if ii < 0 or ii >= h:
                            continue
                        for dx in range(3):
                            jj = j + dx - 1
                            if jj < 0 or jj >= w:
                                continue
                            base = (dy * 3 + dx) * c
                            for ch in range(c):
                                cols[b, i, j, base + ch] = x[b, ii, jj, ch]
    return out


def col2im3x3(const floating[:, :, :, ::1] dcols, Py_ssize_t c):
    cdef Py_ssize_t n = dcols.shape[0], h = dcols.shape[1], w = dcols.shape[2]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((n, h, w, c), dtype=dtype)
    cdef floating[:, :, :, ::1] dx_ = out
    cdef Py_ssize_t b, i, j, dy, dx, ii, jj, ch, base
    # same (dy, dx) accumulation order as the numpy version
    with nogil:
        for b in range(n):
            for dy in range(3):
                for dx in range(3):
                    base = (dy * 3 + dx) * c
                    for i in range(h):
                        ii = i + dy - 1
                        if ii < 0 or ii >= h:
                            continue
                        for j in range(w):
                            jj = j + dx - 1
                            if jj < 0 or jj >= w:
                                continue
                            for ch in range(c):
                                dx_[b, ii, jj, ch] += dcols[b, i, j, base + ch]
    return out


def maxpool2x2(const floating[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t ho = h // 2, wo = w // 2
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((n, ho, wo, c), dtype=dtype)
    idx = np.empty((n, ho, wo, c), dtype=np.int8)
    cdef floating[:, :, :, ::1] o = out
    cdef cnp.int8_t[:, :, :, ::1] ix = idx
    cdef Py_ssize_t b, i, j, ch, k
    cdef floating best, v
    cdef cnp.int8_t arg
    with nogil:
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    for ch in range(c):
                        best = x[b, 2 * i, 2 * j, ch]
                        arg = 0
                        v = x[b, 2 * i, 2 * j + 1, ch]
                        if v > best:
                            best = v
                            arg = 1
                        v = x[b, 2 * i + 1, 2 * j, ch]
                        if v > best:
                            best = v
                            arg = 2
                        v = x[b, 2 * i + 1, 2 * j + 1, ch]
                        if v > best:
                            best = v
                            arg = 3
                        o[b, i, j, ch] = best
                        ix[b, i, j, ch] = arg
    return out, idx


def maxpool2x2_backward(const floating[:, :, :, ::1] dout, const cnp.int8_t[:, :, :, ::1] idx,
                        Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = dout.shape[0], ho = dout.shape[1], wo = dout.shape[2], c = dout.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((n, h, w, c), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, i, j, ch
    cdef cnp.int8_t a
    with nogil:
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    for ch in range(c):
                        a = idx[b, i, j, ch]
                        dx[b, 2 * i + (a >> 1), 2 * j + (a & 1), ch] = dout[b, i, j, ch]
    return out
