"""Minimal dense tensors with reverse-mode gradients."""

from . import kernels
from .gradcheck import check_gradients, numeric_grad, rel_error
from .nn import (
    avg_pool_global,
    conv2d,
    conv_output_size,
    interp_matrix,
    linear,
    relu,
    residual_block,
    resize_bilinear,
    standardize_samples,
)
from .tensor import (
    DiffTensor,
    Tape,
    active_tape,
    add,
    as_tensor,
    bias_add,
    concat,
    constant,
    detach,
    div,
    exp,
    flatten,
    matmul,
    mean,
    mul,
    neg,
    reshape,
    sqdist,
    sqrt,
    square,
    sub,
    sum_,
    take,
    transpose,
)

__all__ = [
    "DiffTensor", "Tape", "active_tape", "add", "as_tensor", "avg_pool_global", "bias_add",
    "check_gradients", "concat", "constant", "conv2d", "conv_output_size", "detach", "div",
    "exp", "flatten", "interp_matrix", "kernels", "linear", "matmul", "mean", "mul", "neg",
    "numeric_grad", "rel_error", "relu", "reshape", "residual_block", "resize_bilinear",
    "sqdist", "sqrt", "square", "standardize_samples", "sub", "sum_", "take", "transpose",
]
