"""Network ops: convolution, ReLU, pooling, residual blocks, input resize."""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np

from ..errors import DimensionError, PreconditionError
from . import kernels
from .tensor import DiffTensor, _f64, _result, add, bias_add


def relu(x: DiffTensor) -> DiffTensor:
    xv = _f64(x.data)
    mask = xv > 0
    return _result(np.where(mask, xv, 0.0), (x,), lambda g: (g * mask,), "relu")


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x: DiffTensor, w: DiffTensor, b: DiffTensor | None = None, stride: int = 1, pad: int = 0) -> DiffTensor:
    """2-D cross-correlation with zero padding, NCHW layout."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape} and {w.shape}")
    if stride < 1 or pad < 0:
        raise PreconditionError(f"conv2d needs stride >= 1 and pad >= 0, got stride={stride}, pad={pad}")
    n, c, h, wd = x.shape
    k, cw, kh, kw = w.shape
    if c != cw:
        raise DimensionError(f"conv2d: input {x.shape} has {c} channels, kernel {w.shape} expects {cw}")
    if kh > h + 2 * pad or kw > wd + 2 * pad:
        raise DimensionError(f"conv2d: kernel {w.shape} larger than padded input {x.shape} (pad={pad})")

    xv, wv = _f64(x.data), _f64(w.data)
    out = kernels.conv2d_forward(xv, wv, stride, pad)

    def vjp(g):
        gx = kernels.conv2d_backward_input(g, wv, x.shape, stride, pad) if x.requires_grad else None
        gw = kernels.conv2d_backward_weight(g, xv, w.shape, stride, pad) if w.requires_grad else None
        return gx, gw

    y = _result(out, (x, w), vjp, "conv2d")
    if b is not None:
        y = bias_add(y, b, axis=1)
    return y


def avg_pool_global(x: DiffTensor) -> DiffTensor:
    """Mean over the spatial extent: N×C×H×W -> N×C."""
    if x.ndim != 4:
        raise DimensionError(f"avg_pool_global expects N×C×H×W, got {x.shape}")
    n, c, h, w = x.shape
    out = _f64(x.data).mean(axis=(2, 3))
    return _result(out, (x,),
                   lambda g: (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).copy(),),
                   "avg_pool_global")


def standardize_samples(x: DiffTensor, eps: float = 1e-8) -> DiffTensor:
    """Zero mean, unit variance per sample (over every axis but the first).

    Samples never mix, so a batch gives the same rows as its pieces.
    """
    if x.ndim < 2:
        raise DimensionError(f"standardize_samples expects a batch of arrays, got {x.shape}")
    xv = _f64(x.data)
    axes = tuple(range(1, xv.ndim))
    n = int(np.prod(xv.shape[1:]))
    xc = xv - xv.mean(axis=axes, keepdims=True)
    sd = np.sqrt((xc ** 2).mean(axis=axes, keepdims=True)) + eps
    y = xc / sd

    def vjp(g):
        # d/dx of (x - m) / (s + eps), s the population std
        gm = g - g.mean(axis=axes, keepdims=True)
        s = sd - eps
        proj = (g * xc).sum(axis=axes, keepdims=True)
        coef = np.divide(proj, n * s * sd ** 2, out=np.zeros_like(s), where=s > 0)
        return (gm / sd - coef * xc,)

    return _result(y, (x,), vjp, "standardize_samples")


def linear(x: DiffTensor, w: DiffTensor, b: DiffTensor | None = None) -> DiffTensor:
    from .tensor import matmul

    y = matmul(x, w)
    return bias_add(y, b, axis=1) if b is not None else y


def residual_block(x: DiffTensor, params: Mapping[str, DiffTensor], stride: int = 1) -> DiffTensor:
    """relu(conv2(relu(conv1(x))) + shortcut(x)) with 3×3 convs.

    ``params`` holds ``conv1.w``, ``conv1.b``, ``conv2.w``, ``conv2.b`` and,
    when channels or stride change, a 1×1 projection ``proj.w``/``proj.b``.
    """
    h = relu(conv2d(x, params["conv1.w"], params.get("conv1.b"), stride=stride, pad=1))
    h = conv2d(h, params["conv2.w"], params.get("conv2.b"), stride=1, pad=1)
    if "proj.w" in params:
        shortcut = conv2d(x, params["proj.w"], params.get("proj.b"), stride=stride, pad=0)
    else:
        if stride != 1 or params["conv2.w"].shape[0] != x.shape[1]:
            raise DimensionError(
                f"residual_block: identity shortcut impossible for input {x.shape} -> "
                f"{params['conv2.w'].shape[0]} channels at stride {stride}; add proj.w"
            )
        shortcut = x
    if h.shape != shortcut.shape:
        raise DimensionError(f"residual_block: branch {h.shape} and shortcut {shortcut.shape} disagree")
    return relu(add(h, shortcut))


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation weights (align_corners=True), shape n_out×n_in."""
    m = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1.0
        return m
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    m[np.arange(n_out), lo] = 1.0 - frac
    m[np.arange(n_out), lo + 1] += frac
    return m


def resize_bilinear(x: DiffTensor, out_h: int, out_w: int) -> DiffTensor:
    if x.ndim != 4:
        raise DimensionError(f"resize_bilinear expects N×C×H×W, got {x.shape}")
    ry = interp_matrix(x.shape[2], out_h)
    rx = interp_matrix(x.shape[3], out_w)
    out = np.einsum("ph,nchw,qw->ncpq", ry, _f64(x.data), rx, optimize=True)
    return _result(out, (x,), lambda g: (np.einsum("ph,ncpq,qw->nchw", ry, g, rx, optimize=True),), "resize")
