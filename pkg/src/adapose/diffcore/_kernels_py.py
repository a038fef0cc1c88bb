"""Pure numpy convolution kernels.

Blocked variant: one tensordot per kernel tap. All arrays are float64 and
C-contiguous; the dispatcher in :mod:`adapose.diffcore.kernels` guarantees it.
"""

import numpy as np

BACKEND = "python"


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d_forward(x, w, stride, pad):
    n, _, h, wd = x.shape
    k, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    xp = _pad(x, pad)
    out = np.zeros((n, ho, wo, k))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
            # (n, c, ho, wo) x (k, c) -> (n, ho, wo, k)
            out += np.tensordot(patch, w[:, :, i, j], axes=([1], [1]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward_input(g, w, x_shape, stride, pad):
    n, c, h, wd = x_shape
    _, _, ho, wo = g.shape
    k, _, kh, kw = w.shape
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            # (n, k, ho, wo) x (k, c) -> (n, ho, wo, c)
            contrib = np.tensordot(g, w[:, :, i, j], axes=([1], [0]))
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += contrib.transpose(0, 3, 1, 2)
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(dxp)


def conv2d_backward_weight(g, x, w_shape, stride, pad):
    k, c, kh, kw = w_shape
    _, _, ho, wo = g.shape
    xp = _pad(x, pad)
    dw = np.empty((k, c, kh, kw))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
            dw[:, :, i, j] = np.tensordot(g, patch, axes=([0, 2, 3], [0, 2, 3]))
    return dw
