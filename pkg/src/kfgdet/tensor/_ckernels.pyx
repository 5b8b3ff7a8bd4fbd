# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: patch extraction/scatter for convolution and max pooling."""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.string cimport memcpy

cnp.import_array()

BACKEND = "cython"


cdef inline Py_ssize_t _out_size(Py_ssize_t size, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t dil) nogil:
    return (size - dil * (k - 1) - 1) // stride + 1


def _im2col(floating[:, :, :, ::1] xp, floating[:, :, ::1] cols,
            Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t sh, Py_ssize_t sw,
            Py_ssize_t dh, Py_ssize_t dw, Py_ssize_t ho, Py_ssize_t wo):
    cdef Py_ssize_t n, c, i, j, oh, ow, row
    cdef Py_ssize_t N = xp.shape[0], C = xp.shape[1], Hp = xp.shape[2], Wp = xp.shape[3]
    cdef floating* src
    cdef floating* dst
    if N == 0 or C == 0 or ho * wo == 0:
        return
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(kh):
                    for j in range(kw):
                        row = (c * kh + i) * kw + j
                        dst = &cols[n, row, 0]
                        for oh in range(ho):
                            src = &xp[n, c, oh * sh + i * dh, j * dw]
                            if sw == 1:
                                memcpy(dst, src, wo * sizeof(floating))
                            else:
                                for ow in range(wo):
                                    dst[ow] = src[ow * sw]
                            dst += wo


def im2col(xp, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t dh, Py_ssize_t dw):
    xp = np.ascontiguousarray(xp)
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t ho = _out_size(xp.shape[2], kh, sh, dh)
    cdef Py_ssize_t wo = _out_size(xp.shape[3], kw, sw, dw)
    cols = np.empty((n, c * kh * kw, ho * wo), dtype=xp.dtype)
    _im2col(xp, cols, kh, kw, sh, sw, dh, dw, ho, wo)
    return cols


def _col2im(floating[:, :, ::1] cols, floating[:, :, :, ::1] out,
            Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t sh, Py_ssize_t sw,
            Py_ssize_t dh, Py_ssize_t dw, Py_ssize_t ho, Py_ssize_t wo):
    cdef Py_ssize_t n, c, i, j, oh, ow, row
    cdef Py_ssize_t N = out.shape[0], C = out.shape[1]
    cdef floating* src
    cdef floating* dst
    if N == 0 or C == 0 or ho * wo == 0:
        return
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(kh):
                    for j in range(kw):
                        row = (c * kh + i) * kw + j
                        src = &cols[n, row, 0]
                        for oh in range(ho):
                            dst = &out[n, c, oh * sh + i * dh, j * dw]
                            for ow in range(wo):
                                dst[ow * sw] += src[ow]
                            src += wo


def col2im(cols, Py_ssize_t c, Py_ssize_t hp, Py_ssize_t wp, Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t dh, Py_ssize_t dw):
    cols = np.ascontiguousarray(cols)
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t ho = _out_size(hp, kh, sh, dh)
    cdef Py_ssize_t wo = _out_size(wp, kw, sw, dw)
    cols = cols.reshape(n, c * kh * kw, ho * wo)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    _col2im(cols, out, kh, kw, sh, sw, dh, dw, ho, wo)
    return out


def _maxpool(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] out, cnp.int64_t[:, :, :, ::1] idx,
             Py_ssize_t k, Py_ssize_t s):
    cdef Py_ssize_t n, c, oh, ow, i, j, h, w, best_i
    cdef Py_ssize_t N = xp.shape[0], C = xp.shape[1], Wp = xp.shape[3]
    cdef Py_ssize_t ho = out.shape[2], wo = out.shape[3]
    cdef floating best, v
    with nogil:
        for n in range(N):
            for c in range(C):
                for oh in range(ho):
                    for ow in range(wo):
                        h = oh * s
                        w = ow * s
                        best = xp[n, c, h, w]
                        best_i = h * Wp + w
                        for i in range(k):
                            for j in range(k):
                                v = xp[n, c, h + i, w + j]
                                if v > best:
                                    best = v
                                    best_i = (h + i) * Wp + w + j
                        out[n, c, oh, ow] = best
                        idx[n, c, oh, ow] = best_i


def maxpool(xp, Py_ssize_t k, Py_ssize_t s):
    xp = np.ascontiguousarray(xp)
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t ho = (xp.shape[2] - k) // s + 1
    cdef Py_ssize_t wo = (xp.shape[3] - k) // s + 1
    out = np.empty((n, c, ho, wo), dtype=xp.dtype)
    idx = np.empty((n, c, ho, wo), dtype=np.int64)
    _maxpool(xp, out, idx, k, s)
    return out, idx


def _maxpool_backward(floating[:, :, :, ::1] gout, cnp.int64_t[:, :, :, ::1] idx,
                      floating[:, :, ::1] out):
    cdef Py_ssize_t n, c, oh, ow
    cdef Py_ssize_t N = gout.shape[0], C = gout.shape[1], ho = gout.shape[2], wo = gout.shape[3]
    with nogil:
        for n in range(N):
            for c in range(C):
                for oh in range(ho):
                    for ow in range(wo):
                        out[n * C + c, 0, idx[n, c, oh, ow]] += gout[n, c, oh, ow]


def maxpool_backward(gout, idx, Py_ssize_t hp, Py_ssize_t wp):
    gout = np.ascontiguousarray(gout)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    cdef Py_ssize_t n = gout.shape[0], c = gout.shape[1]
    out = np.zeros((n * c, 1, hp * wp), dtype=gout.dtype)
    _maxpool_backward(gout, idx, out)
    return out.reshape(n, c, hp, wp)
