"""Minimal reverse-mode autodiff on numpy arrays.

Every value is a float64 `Tensor`. Ops record parent links and a backward
closure; `Tensor.backward()` runs them in reverse topological order.
Gradients accumulate, so call `zero_grad` between steps.
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents)
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take_slice(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(*parents) -> bool:
    if not _grad_enabled:
        return False
    return any(p.requires_grad or p._parents for p in parents)


def _make(data, parents, backward) -> Tensor:
    if _tracked(*parents):
        return Tensor(data, _parents=parents, _backward=backward)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum out axes that broadcasting expanded so grad matches `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- arithmetic ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def backward(g):
        a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out_data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul supports 2D operands only")
    out_data = a.data @ b.data

    def backward(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _make(out_data, (a, b), backward)


# -- elementwise -----------------------------------------------------------


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out_data = np.where(mask, x.data, 0.0)

    def backward(g):
        x._accumulate(g * mask)

    return _make(out_data, (x,), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.exp(x.data)

    def backward(g):
        x._accumulate(g * out_data)

    return _make(out_data, (x,), backward)


def log(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.log(x.data)

    def backward(g):
        x._accumulate(g / x.data)

    return _make(out_data, (x,), backward)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.sqrt(x.data)

    def backward(g):
        x._accumulate(g * 0.5 / out_data)

    return _make(out_data, (x,), backward)


def square(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        x._accumulate(g * 2.0 * x.data)

    return _make(x.data * x.data, (x,), backward)


def absolute(x) -> Tensor:
    """|x| with subgradient 0 at the kink."""
    x = as_tensor(x)
    sign = np.sign(x.data)

    def backward(g):
        x._accumulate(g * sign)

    return _make(np.abs(x.data), (x,), backward)


def sin(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        x._accumulate(g * np.cos(x.data))

    return _make(np.sin(x.data), (x,), backward)


def cos(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        x._accumulate(-g * np.sin(x.data))

    return _make(np.cos(x.data), (x,), backward)


def pow_scalar(x, exponent: float) -> Tensor:
    """x ** p for constant p >= 1 (derivative stays finite at 0)."""
    x = as_tensor(x)
    out_data = np.power(x.data, exponent)

    def backward(g):
        x._accumulate(g * exponent * np.power(x.data, exponent - 1.0))

    return _make(out_data, (x,), backward)


def where(cond, a, b) -> Tensor:
    """Select by a boolean mask; the mask itself is not differentiated."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    out_data = np.where(cond, a.data, b.data)

    def backward(g):
        a._accumulate(_unbroadcast(np.where(cond, g, 0.0), a.data.shape))
        b._accumulate(_unbroadcast(np.where(cond, 0.0, g), b.data.shape))

    return _make(out_data, (a, b), backward)


def minimum(a, b) -> Tensor:
    """Elementwise min; ties route the gradient to the first argument."""
    a, b = as_tensor(a), as_tensor(b)
    return where(a.data <= b.data, a, b)


# -- reductions ------------------------------------------------------------


def sum_(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.data.shape).copy())

    return _make(out_data, (x,), backward)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([x.data.shape[a] for a in axis]))
    else:
        count = x.data.shape[axis]
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


def max_over_axis(x, axis: int) -> tuple:
    """Max reduction; returns (Tensor, argmax). Ties pick the lowest index."""
    x = as_tensor(x)
    arg = np.argmax(x.data, axis=axis)
    out_data = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(
            gx, np.expand_dims(arg, axis), np.expand_dims(np.asarray(g), axis), axis
        )
        x._accumulate(gx)

    return _make(out_data, (x,), backward), arg


# -- shape manipulation ----------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.reshape(shape)

    def backward(g):
        x._accumulate(np.asarray(g).reshape(x.data.shape))

    return _make(out_data, (x,), backward)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            t._accumulate(g[tuple(index)])

    return _make(out_data, tuple(tensors), backward)


def take_slice(x, key) -> Tensor:
    """Basic (slice / int-array) indexing with scatter-add backward."""
    x = as_tensor(x)
    out_data = x.data[key]
    parts = key if isinstance(key, tuple) else (key,)
    plain = all(isinstance(k, (int, slice)) for k in parts)

    def backward(g):
        gx = np.zeros_like(x.data)
        if plain:
            gx[key] += g
        else:
            np.add.at(gx, key, g)
        x._accumulate(gx)

    return _make(out_data, (x,), backward)


def take_flat(x, flat_indices) -> Tensor:
    """Gather from the flattened tensor; duplicate indices sum in backward."""
    x = as_tensor(x)
    flat_indices = np.asarray(flat_indices, dtype=np.int64)
    out_data = x.data.ravel()[flat_indices]

    def backward(g):
        gx = np.zeros(x.data.size)
        np.add.at(gx, flat_indices, np.asarray(g).ravel())
        x._accumulate(gx.reshape(x.data.shape))

    return _make(out_data, (x,), backward)


def scatter_rows(x, offset: int, step: int, length: int) -> Tensor:
    """Place rows of (n, d) at positions offset + i*step of a (length, d) zero map."""
    x = as_tensor(x)
    n = x.data.shape[0]
    out_data = np.zeros((length,) + x.data.shape[1:])
    out_data[offset : offset + step * n : step] = x.data

    def backward(g):
        x._accumulate(g[offset : offset + step * n : step])

    return _make(out_data, (x,), backward)


def pad_rows(x, before: int, after: int) -> Tensor:
    """Zero-pad along axis 0."""
    x = as_tensor(x)
    width = [(before, after)] + [(0, 0)] * (x.ndim - 1)
    out_data = np.pad(x.data, width)
    n = x.data.shape[0]

    def backward(g):
        x._accumulate(g[before : before + n])

    return _make(out_data, (x,), backward)


def segment_max(x, segment_ids, num_segments: int) -> Tensor:
    """Per-segment max over rows of (n, d); empty segments give zero rows.

    `segment_ids` must be sorted ascending. Gradient flows to the first
    maximal row of each segment.
    """
    x = as_tensor(x)
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    n, d = x.data.shape
    starts = np.searchsorted(segment_ids, np.arange(num_segments))
    ends = np.searchsorted(segment_ids, np.arange(num_segments) + 1)
    counts = ends - starts
    nonempty = counts > 0
    out_data = np.zeros((num_segments, d))
    first_max = np.zeros((num_segments, d), dtype=np.int64)
    if n > 0 and nonempty.any():
        # reduceat over nonempty starts only; they are strictly increasing,
        # always < n, and consecutive gaps hold no rows
        ne_starts = starts[nonempty]
        out_data[nonempty] = np.maximum.reduceat(x.data, ne_starts, axis=0)
        hit = x.data == out_data[segment_ids]
        row_or_n = np.where(hit, np.arange(n)[:, None], n)
        first_max[nonempty] = np.minimum.reduceat(row_or_n, ne_starts, axis=0)

    def backward(g):
        gx = np.zeros_like(x.data)
        if nonempty.any():
            rows = first_max[nonempty].ravel()
            cols = np.tile(np.arange(d), int(nonempty.sum()))
            np.add.at(gx, (rows, cols), np.asarray(g)[nonempty].ravel())
        x._accumulate(gx)

    return _make(out_data, (x,), backward)


# -- composed helpers ------------------------------------------------------


def log_softmax(x, axis: int = 1) -> Tensor:
    """Row-stable log softmax; the shift is treated as a constant."""
    x = as_tensor(x)
    shift = x.data.max(axis=axis, keepdims=True)
    centered = sub(x, shift)
    lse = log(sum_(exp(centered), axis=axis, keepdims=True))
    return sub(centered, lse)


def softmax(x, axis: int = 1) -> Tensor:
    return exp(log_softmax(x, axis=axis))


def smooth_l1(x, delta: float = 1.0) -> Tensor:
    """Quadratic inside |x| < delta, linear outside; continuous at the join."""
    x = as_tensor(x)
    a = absolute(x)
    return where(a.data < delta, mul(square(x), 0.5 / delta), sub(a, 0.5 * delta))


# -- gradient checking -----------------------------------------------------


def grad_check(fn, params, eps: float = 1e-6) -> float:
    """Max relative error between backward grads and central differences.

    `fn` must rebuild its graph on every call and return a scalar Tensor.
    Relative error is |fd - ad| / max(1e-8, |fd| + |ad|).
    """
    for p in params:
        p.zero_grad()
    out = fn()
    out.backward()
    analytic = [
        np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params
    ]
    worst = 0.0
    for p, ad in zip(params, analytic):
        flat = p.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                hi = fn().item()
            flat[i] = orig - eps
            with no_grad():
                lo = fn().item()
            flat[i] = orig
            fd = (hi - lo) / (2.0 * eps)
            a = ad.ravel()[i]
            worst = max(worst, abs(fd - a) / max(1e-8, abs(fd) + abs(a)))
    return worst
