# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch kernels for the convolution hot loop.

Accumulation order in col2im matches the numpy fallback (ky, kx ascending
per output element) so both backends are bitwise identical.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "ext"


cdef inline Py_ssize_t _lo(Py_ssize_t k, Py_ssize_t pad, Py_ssize_t stride) nogil:
    # smallest o with o*stride + k - pad >= 0
    cdef Py_ssize_t num = pad - k
    if num <= 0:
        return 0
    return (num + stride - 1) // stride


cdef inline Py_ssize_t _hi(Py_ssize_t k, Py_ssize_t pad, Py_ssize_t stride,
                           Py_ssize_t size, Py_ssize_t out_size) nogil:
    # one past the largest o with o*stride + k - pad <= size - 1
    cdef Py_ssize_t num = size - 1 - k + pad
    if num < 0:
        return 0
    cdef Py_ssize_t hi = num // stride + 1
    return hi if hi < out_size else out_size


def im2col(cnp.ndarray x_in, int ksize, int stride, int pad):
    cdef cnp.ndarray[cnp.float64_t, ndim=4] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t hp = h + 2 * pad, wp = w + 2 * pad
    cdef Py_ssize_t oh = (hp - ksize) // stride + 1
    cdef Py_ssize_t ow = (wp - ksize) // stride + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=3] cols = np.zeros((b, c * ksize * ksize, oh * ow))
    cdef Py_ssize_t bi, ci, ky, kx, oy, ox, row, base
    cdef Py_ssize_t oy0, oy1, ox0, ox1, iy, ix0
    cdef double[:, :, :, :] xv = x
    cdef double[:, :, :] cv = cols
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for ky in range(ksize):
                    oy0 = _lo(ky, pad, stride)
                    oy1 = _hi(ky, pad, stride, h, oh)
                    for kx in range(ksize):
                        row = (ci * ksize + ky) * ksize + kx
                        ox0 = _lo(kx, pad, stride)
                        ox1 = _hi(kx, pad, stride, w, ow)
                        for oy in range(oy0, oy1):
                            iy = oy * stride + ky - pad
                            base = oy * ow
                            ix0 = ox0 * stride + kx - pad
                            for ox in range(ox0, ox1):
                                cv[bi, row, base + ox] = xv[bi, ci, iy, ix0]
                                ix0 += stride
    return cols


def col2im(cnp.ndarray cols_in, x_shape, int ksize, int stride, int pad):
    cdef cnp.ndarray[cnp.float64_t, ndim=3] cols = np.ascontiguousarray(cols_in, dtype=np.float64)
    cdef Py_ssize_t b = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t hp = h + 2 * pad, wp = w + 2 * pad
    cdef Py_ssize_t oh = (hp - ksize) // stride + 1
    cdef Py_ssize_t ow = (wp - ksize) // stride + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=4] out = np.zeros((b, c, h, w))
    cdef Py_ssize_t bi, ci, ky, kx, oy, ox, row, base
    cdef Py_ssize_t oy0, oy1, ox0, ox1, iy, ix0
    cdef double[:, :, :] cv = cols
    cdef double[:, :, :, :] ov = out
    with nogil:
        for ky in range(ksize):
            oy0 = _lo(ky, pad, stride)
            oy1 = _hi(ky, pad, stride, h, oh)
            for kx in range(ksize):
                ox0 = _lo(kx, pad, stride)
                ox1 = _hi(kx, pad, stride, w, ow)
                for bi in range(b):
                    for ci in range(c):
                        row = (ci * ksize + ky) * ksize + kx
                        for oy in range(oy0, oy1):
                            iy = oy * stride + ky - pad
                            base = oy * ow
                            ix0 = ox0 * stride + kx - pad
                            for ox in range(ox0, ox1):
                                ov[bi, ci, iy, ix0] += cv[bi, row, base + ox]
                                ix0 += stride
    return out
