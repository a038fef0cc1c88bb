# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels: per-sample im2col / col2im + BLAS dgemm.

Same contract as ``_kernels_py``: float64 C-contiguous arrays in, fresh
float64 C-contiguous arrays out.
"""

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND = "ext"


cdef void _im2col(const double[:, :, ::1] x, double[:, ::1] cols,
                  int kh, int kw, int stride, int pad, int ho, int wo) noexcept nogil:
    cdef int c, i, j, oh, ow, row, ih, iw
    cdef int nc = x.shape[0], h = x.shape[1], wd = x.shape[2]
    for c in range(nc):
        for i in range(kh):
            for j in range(kw):
                row = (c * kh + i) * kw + j
                for oh in range(ho):
                    ih = oh * stride + i - pad
                    if ih < 0 or ih >= h:
                        for ow in range(wo):
                            cols[row, oh * wo + ow] = 0.0
                        continue
                    for ow in range(wo):
                        iw = ow * stride + j - pad
                        if iw < 0 or iw >= wd:
                            cols[row, oh * wo + ow] = 0.0
                        else:
                            cols[row, oh * wo + ow] = x[c, ih, iw]


cdef void _col2im(const double[:, ::1] cols, double[:, :, ::1] dx,
                  int kh, int kw, int stride, int pad, int ho, int wo) noexcept nogil:
    cdef int c, i, j, oh, ow, row, ih, iw
    cdef int nc = dx.shape[0], h = dx.shape[1], wd = dx.shape[2]
    for c in range(nc):
        for i in range(kh):
            for j in range(kw):
                row = (c * kh + i) * kw + j
                for oh in range(ho):
                    ih = oh * stride + i - pad
                    if ih < 0 or ih >= h:
                        continue
                    for ow in range(wo):
                        iw = ow * stride + j - pad
                        if iw >= 0 and iw < wd:
                            dx[c, ih, iw] += cols[row, oh * wo + ow]


def conv2d_forward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w, int stride, int pad):
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef int k = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int ho = (h + 2 * pad - kh) // stride + 1
    cdef int wo = (wd + 2 * pad - kw) // stride + 1
    cdef int p = ho * wo, q = c * kh * kw
    cdef double alpha = 1.0, beta = 0.0
    cdef char transa = b'N', transb = b'N'
    out = np.empty((n, k, ho, wo))
    cdef double[:, :, :, ::1] y = out
    cdef double[:, ::1] cols = np.empty((q, p))
    cdef int s
    with nogil:
        for s in range(n):
            _im2col(x[s], cols, kh, kw, stride, pad, ho, wo)
            # row-major Y(k,p) = W(k,q) @ cols(q,p)
            dgemm(&transa, &transb, &p, &k, &q, &alpha, &cols[0, 0], &p,
                  <double*>&w[0, 0, 0, 0], &q, &beta, &y[s, 0, 0, 0], &p)
    return out


def conv2d_backward_input(const double[:, :, :, ::1] g, const double[:, :, :, ::1] w, x_shape, int stride, int pad):
    cdef int n = x_shape[0], c = x_shape[1], h = x_shape[2], wd = x_shape[3]
    cdef int k = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int ho = g.shape[2], wo = g.shape[3]
    cdef int p = ho * wo, q = c * kh * kw
    cdef double alpha = 1.0, beta = 0.0
    cdef char transa = b'N', transb = b'T'
    out = np.zeros((n, c, h, wd))
    cdef double[:, :, :, ::1] dx = out
    cdef double[:, ::1] dcols = np.empty((q, p))
    cdef int s
    with nogil:
        for s in range(n):
            # row-major dcols(q,p) = W^T(q,k) @ G(k,p)
            dgemm(&transa, &transb, &p, &q, &k, &alpha, <double*>&g[s, 0, 0, 0], &p,
                  <double*>&w[0, 0, 0, 0], &q, &beta, &dcols[0, 0], &p)
            _col2im(dcols, dx[s], kh, kw, stride, pad, ho, wo)
    return out


def conv2d_backward_weight(const double[:, :, :, ::1] g, const double[:, :, :, ::1] x, w_shape, int stride, int pad):
    cdef int n = x.shape[0], c = x.shape[1]
    cdef int k = w_shape[0], kh = w_shape[2], kw = w_shape[3]
    cdef int ho = g.shape[2], wo = g.shape[3]
    cdef int p = ho * wo, q = c * kh * kw
    cdef double alpha = 1.0, beta = 1.0
    cdef char transa = b'T', transb = b'N'
    out = np.zeros((k, c, kh, kw))
    cdef double[:, :, :, ::1] dw = out
    cdef double[:, ::1] cols = np.empty((q, p))
    cdef int s
    with nogil:
        for s in range(n):
            _im2col(x[s], cols, kh, kw, stride, pad, ho, wo)
            # row-major dW(k,q) += G(k,p) @ cols^T(p,q)
            dgemm(&transa, &transb, &q, &k, &p, &alpha, &cols[0, 0], &p,
                  <double*>&g[s, 0, 0, 0], &p, &beta, &dw[0, 0, 0, 0], &q)
    return out
