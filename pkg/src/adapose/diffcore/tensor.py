"""Dense tensors with tape-recorded reverse-mode gradients.

Forward values are stored in the operands' dtype (float64, or float32 for
training) but every op computes and reduces in float64. Gradients flow
only for ops executed while a :class:`Tape` is active.
"""

from __future__ import annotations

import numbers

import numpy as np

from ..errors import DimensionError, PreconditionError

_FLOATS = (np.float32, np.float64)
_active: list["Tape"] = []


def _f64(a):
    return np.asarray(a, dtype=np.float64)


class _Node:
    __slots__ = ("out", "inputs", "vjp", "index", "op")

    def __init__(self, out, inputs, vjp, index, op):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp
        self.index = index
        self.op = op


class Tape:
    """Ordered record of differentiable ops for one forward pass.

    Use as a context manager; ops run inside the ``with`` block are recorded
    when at least one operand requires grad::

        with Tape() as tape:
            loss = model(x).sum()
        tape.backward(loss)
        tape.clear()
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.replay_order: list[int] = []

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, inputs, vjp, op=""):
        node = _Node(out, inputs, vjp, len(self.nodes), op)
        self.nodes.append(node)
        out._node = node
        out._tape = self

    def clear(self):
        for node in self.nodes:
            node.out._node = None
            node.out._tape = None
        self.nodes = []
        self.replay_order = []

    def backward(self, loss: "DiffTensor", seed=None) -> int:
        """Propagate adjoints from ``loss`` into every participating leaf.

        Each leaf's ``grad`` receives one accumulation per call; calling
        twice without zeroing adds twice. Returns the number of leaves
        updated.
        """
        if seed is None:
            if loss.size != 1:
                raise PreconditionError(f"backward needs a scalar loss or an explicit seed, got shape {loss.shape}")
            seed = np.ones(loss.shape)
        seed = _f64(seed)
        if seed.shape != loss.shape:
            raise DimensionError(f"seed shape {seed.shape} does not match loss shape {loss.shape}")

        grads = {id(loss): seed.copy()}
        leaves = {}
        if loss._node is None and loss.requires_grad:
            leaves[id(loss)] = loss
        self.replay_order = []
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            self.replay_order.append(node.index)
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if inp._node is None:
                    leaves[key] = inp

        for key, leaf in leaves.items():
            g = grads[key]
            if leaf.grad is None:
                leaf.grad = np.zeros(leaf.shape, dtype=leaf.dtype)
            leaf.grad += np.reshape(g, leaf.shape).astype(leaf.dtype)
        return len(leaves)


def active_tape() -> Tape | None:
    return _active[-1] if _active else None


class DiffTensor:
    """Contiguous real array that can take part in a recorded graph."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_node", "_tape")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in _FLOATS else np.float64
        self.data = np.asarray(data, dtype=dtype, order="C")
        if self.data.dtype not in _FLOATS:
            raise TypeError(f"unsupported dtype {self.data.dtype}")
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros(self.data.shape, dtype=self.data.dtype) if requires_grad else None
        self.name = name
        self._node = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._node is None

    def numpy(self):
        return self.data

    def item(self):
        if self.size != 1:
            raise PreconditionError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self, seed=None):
        if self._tape is None:
            raise PreconditionError("tensor was not produced on an active tape")
        return self._tape.backward(self, seed)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"DiffTensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    def __len__(self):
        return self.shape[0]

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, o: matmul(self, o)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def square(self):
        return square(self)

    def sqrt(self):
        return sqrt(self)

    def exp(self):
        return exp(self)

    def relu(self):
        from .nn import relu

        return relu(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = shape[0]
        return reshape(self, shape)

    def flatten(self, start_dim=0):
        return flatten(self, start_dim)

    def detach(self):
        return detach(self)


def as_tensor(x, like: DiffTensor | None = None) -> DiffTensor:
    if isinstance(x, DiffTensor):
        return x
    if isinstance(x, numbers.Real):
        return DiffTensor(np.array(float(x)), dtype=like.dtype if like is not None else np.float64)
    return DiffTensor(x)


def constant(data, dtype=None) -> DiffTensor:
    return DiffTensor(data, dtype=dtype)


def _result(value, inputs, vjp, op, dtype=None):
    if dtype is None:
        dtype = np.result_type(*[t.dtype for t in inputs])
    out = DiffTensor(value, dtype=dtype)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.grad = None
        tape.record(out, tuple(inputs), vjp, op)
    return out


def _pair(a, b, opname):
    if not isinstance(a, DiffTensor):
        a = as_tensor(a, like=b if isinstance(b, DiffTensor) else None)
    if not isinstance(b, DiffTensor):
        b = as_tensor(b, like=a)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} differ (only scalar broadcasting is supported)")
    return a, b


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


# --- elementwise ---------------------------------------------------------

def add(a, b):
    a, b = _pair(a, b, "add")
    return _result(_f64(a.data) + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = _pair(a, b, "sub")
    return _result(_f64(a.data) - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = _pair(a, b, "mul")
    av, bv = _f64(a.data), _f64(b.data)
    return _result(av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)), "mul")


def div(a, b):
    a, b = _pair(a, b, "div")
    av, bv = _f64(a.data), _f64(b.data)
    q = av / bv
    return _result(q, (a, b),
                   lambda g: (_unbroadcast(g / bv, a.shape), _unbroadcast(-g * q / bv, b.shape)), "div")


def neg(a):
    return _result(-_f64(a.data), (a,), lambda g: (-g,), "neg")


def square(a):
    av = _f64(a.data)
    return _result(av * av, (a,), lambda g: (2.0 * av * g,), "square")


def sqrt(a):
    r = np.sqrt(_f64(a.data))
    return _result(r, (a,), lambda g: (g / (2.0 * r),), "sqrt")


def exp(a):
    e = np.exp(_f64(a.data))
    return _result(e, (a,), lambda g: (g * e,), "exp")


# --- reductions and shape ------------------------------------------------

def sum_(a, axis=None):
    av = _f64(a.data)
    out = av.sum(axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), vjp, "sum")


def mean(a, axis=None):
    av = _f64(a.data)
    n = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    out = av.mean(axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _result(out, (a,), vjp, "mean")


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}") from exc
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def flatten(a, start_dim=0):
    lead = a.shape[:start_dim]
    return reshape(a, lead + (-1,) if a.ndim else (1,))


def detach(a):
    return DiffTensor(a.data.copy())


def take(a, idx):
    """Basic indexing (ints, slices); the adjoint scatters back."""
    out = a.data[idx]

    def vjp(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return (full,)

    return _result(np.array(out), (a,), vjp, "take")


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise PreconditionError("concat of an empty list")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} disagree off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([_f64(t.data) for t in tensors], axis=axis)
    cuts = np.cumsum(sizes)[:-1]
    return _result(out, tuple(tensors), lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


# --- linear algebra ------------------------------------------------------

def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = _f64(a.data), _f64(b.data)
    return _result(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def transpose(a):
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got {a.shape}")
    return _result(a.data.T, (a,), lambda g: (g.T,), "transpose")


def bias_add(x, b, axis=1):
    """Add a vector along ``axis`` (channel bias)."""
    if b.ndim != 1 or x.ndim <= axis or x.shape[axis] != b.shape[0]:
        raise DimensionError(f"bias_add: bias {b.shape} does not fit axis {axis} of {x.shape}")
    view = [1] * x.ndim
    view[axis] = -1
    other = tuple(i for i in range(x.ndim) if i != axis)
    return _result(_f64(x.data) + _f64(b.data).reshape(view), (x, b),
                   lambda g: (g, g.sum(axis=other)), "bias_add")


def sqdist(x, y):
    """Pairwise squared Euclidean distances between the rows of two matrices."""
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise DimensionError(f"sqdist: row dimensions of {x.shape} and {y.shape} differ")
    xv, yv = _f64(x.data), _f64(y.data)
    d = (xv * xv).sum(1)[:, None] + (yv * yv).sum(1)[None, :] - 2.0 * (xv @ yv.T)
    np.maximum(d, 0.0, out=d)

    def vjp(g):
        gx = 2.0 * (g.sum(1)[:, None] * xv - g @ yv)
        gy = 2.0 * (g.sum(0)[:, None] * yv - g.T @ xv)
        return gx, gy

    return _result(d, (x, y), vjp, "sqdist")
