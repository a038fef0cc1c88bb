"""Central finite-difference gradient checking."""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

from .tensor import DiffTensor, Tape


def rel_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_grad(fn: Callable[[], float], tensor: DiffTensor, index, h: float = 1e-5) -> float:
    """d fn / d tensor[index] by central differences, restoring the value."""
    old = tensor.data[index]
    tensor.data[index] = old + h
    fp = fn()
    tensor.data[index] = old - h
    fm = fn()
    tensor.data[index] = old
    return (fp - fm) / (2.0 * h)


def check_gradients(
    fn: Callable[[], DiffTensor],
    tensors: Sequence[DiffTensor],
    h: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-8,
) -> float:
    """Compare tape gradients of scalar ``fn()`` against central differences.

    ``fn`` must rebuild the graph from the current values of ``tensors`` on
    each call. With ``max_entries`` set, that many random entries per tensor
    are probed instead of all of them. Returns the worst relative error.
    """
    for t in tensors:
        t.zero_grad()
    with Tape() as tape:
        out = fn()
    tape.backward(out)
    tape.clear()

    def value():
        return float(fn().data.sum())

    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        flat = [np.unravel_index(i, t.shape) for i in range(t.size)]
        if max_entries is not None and t.size > max_entries:
            pick = rng.choice(t.size, size=max_entries, replace=False)
            flat = [flat[i] for i in pick]
        analytic = np.array([t.grad[idx] for idx in flat])
        numeric = np.array([numeric_grad(value, t, idx, h) for idx in flat])
        worst = max(worst, rel_error(analytic, numeric, floor))
    return worst
