# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel core: single-pass patch extraction/accumulation and
bilinear gather/scatter. Must stay numerically equivalent to numpy_backend."""

import numpy as np

cimport cython
cimport numpy as cnp

ctypedef fused floating:
    float
    double


def im2col(floating[:, :, :, ::1] padded, int kh, int kw, int stride):
    cdef Py_ssize_t n = padded.shape[0]
    cdef Py_ssize_t c = padded.shape[1]
    cdef Py_ssize_t hp = padded.shape[2]
    cdef Py_ssize_t wp = padded.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1
    cdef Py_ssize_t wo = (wp - kw) // stride + 1
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.empty((n, c * kh * kw, ho * wo), dtype=dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, oy, ox, row
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for oy in range(ho):
                            for ox in range(wo):
                                out[b, row, oy * wo + ox] = padded[
                                    b, ch, oy * stride + i, ox * stride + j]
    return out_arr


def col2im_add(floating[:, :, ::1] cols, int hp, int wp, int kh, int kw,
               int stride):
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t c = cols.shape[1] // (kh * kw)
    cdef Py_ssize_t ho = (hp - kh) // stride + 1
    cdef Py_ssize_t wo = (wp - kw) // stride + 1
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, oy, ox, row
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for oy in range(ho):
                            for ox in range(wo):
                                out[b, ch, oy * stride + i, ox * stride + j] \
                                    += cols[b, row, oy * wo + ox]
    return out_arr


def bilinear_gather(floating[:, :, ::1] img, double[:, ::1] rows,
                    double[:, ::1] cols, bint wrap_cols):
    cdef Py_ssize_t c = img.shape[0]
    cdef Py_ssize_t h = img.shape[1]
    cdef Py_ssize_t w = img.shape[2]
    cdef Py_ssize_t ho = rows.shape[0]
    cdef Py_ssize_t wo = rows.shape[1]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.empty((c, ho, wo), dtype=dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t ch, i, j
    cdef double r, cc, fr, fc
    cdef Py_ssize_t r0, r1, c0, c1
    with nogil:
        for i in range(ho):
            for j in range(wo):
                r = rows[i, j]
                if r < 0.0:
                    r = 0.0
                elif r > h - 1.0:
                    r = h - 1.0
                cc = cols[i, j]
                if wrap_cols:
                    cc = cc - w * <Py_ssize_t>(cc / w)
                    if cc < 0.0:
                        cc += w
                elif cc < 0.0:
                    cc = 0.0
                elif cc > w - 1.0:
                    cc = w - 1.0
                r0 = <Py_ssize_t>r
                c0 = <Py_ssize_t>cc
                if r0 > h - 1:
                    r0 = h - 1
                if c0 > w - 1:
                    c0 = w - 1
                fr = r - r0
                fc = cc - c0
                r1 = r0 + 1
                if r1 > h - 1:
                    r1 = h - 1
                c1 = c0 + 1
                if wrap_cols:
                    if c1 > w - 1:
                        c1 = 0
                elif c1 > w - 1:
                    c1 = w - 1
                for ch in range(c):
                    out[ch, i, j] = <floating>(
                        img[ch, r0, c0] * (1.0 - fr) * (1.0 - fc)
                        + img[ch, r0, c1] * (1.0 - fr) * fc
                        + img[ch, r1, c0] * fr * (1.0 - fc)
                        + img[ch, r1, c1] * fr * fc)
    return out_arr


def bilinear_scatter_add(floating[:, :, ::1] grad_out, double[:, ::1] rows,
                         double[:, ::1] cols, bint wrap_cols, int h, int w):
    cdef Py_ssize_t c = grad_out.shape[0]
    cdef Py_ssize_t ho = rows.shape[0]
    cdef Py_ssize_t wo = rows.shape[1]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((c, h, w), dtype=dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t ch, i, j
    cdef double r, cc, fr, fc
    cdef Py_ssize_t r0, r1, c0, c1
    with nogil:
        for i in range(ho):
            for j in range(wo):
                r = rows[i, j]
                if r < 0.0:
                    r = 0.0
                elif r > h - 1.0:
                    r = h - 1.0
                cc = cols[i, j]
                if wrap_cols:
                    cc = cc - w * <Py_ssize_t>(cc / w)
                    if cc < 0.0:
                        cc += w
                elif cc < 0.0:
                    cc = 0.0
                elif cc > w - 1.0:
                    cc = w - 1.0
                r0 = <Py_ssize_t>r
                c0 = <Py_ssize_t>cc
                if r0 > h - 1:
                    r0 = h - 1
                if c0 > w - 1:
                    c0 = w - 1
                fr = r - r0
                fc = cc - c0
                r1 = r0 + 1
                if r1 > h - 1:
                    r1 = h - 1
                c1 = c0 + 1
                if wrap_cols:
                    if c1 > w - 1:
                        c1 = 0
                elif c1 > w - 1:
                    c1 = w - 1
                for ch in range(c):
                    out[ch, r0, c0] += <floating>(grad_out[ch, i, j]
                                                  * (1.0 - fr) * (1.0 - fc))
                    out[ch, r0, c1] += <floating>(grad_out[ch, i, j]
                                                  * (1.0 - fr) * fc)
                    out[ch, r1, c0] += <floating>(grad_out[ch, i, j]
                                                  * fr * (1.0 - fc))
                    out[ch, r1, c1] += <floating>(grad_out[ch, i, j]
                                                  * fr * fc)
    return out_arr
