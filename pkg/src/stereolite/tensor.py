"""Dense tensor container with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array together with an optional gradient slot
and a closure that propagates the output cotangent to its parents.  The graph
is built eagerly as ops execute; ``backward`` (in :mod:`stereolite.autodiff`)
replays it in reverse topological order.  Gradients accumulate across backward
calls until explicitly zeroed.

Supported dtypes are float32 (normal operation) and float64 (gradcheck mode).
All ops are pure: inputs are never mutated, and identical inputs give
bit-identical outputs for a fixed thread count.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .kernels import ShapeError, check

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    """N-dimensional float array, optionally tracked by the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._parents = ()
        self.op = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward, op):
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = track
        out._backward = backward if track else None
        out._parents = tuple(parents) if track else ()
        out.op = op
        return out

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def zero_grad(self):
        self.grad = None

    # -- introspection --------------------------------------------------------

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

    def item(self):
        return self.data.item()

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, op={self.op})"

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        return add(as_tensor(other), -self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / float(other))
        raise TypeError("tensor/tensor division is not supported")

    def __getitem__(self, idx):
        return slice_(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to ``shape``."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reduction ops
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return Tensor._make(out_data, (a, b), backward, "add")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return Tensor._make(out_data, (a, b), backward, "mul")


def scale(a, s):
    a = as_tensor(a)
    out_data = a.data * a.data.dtype.type(s)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * a.data.dtype.type(s))

    return Tensor._make(out_data, (a,), backward, "scale")


def relu(a):
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * (a.data > 0))

    return Tensor._make(out_data, (a,), backward, "relu")


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a.accumulate_grad(np.broadcast_to(g, a.shape).astype(a.dtype))
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        a.accumulate_grad(np.broadcast_to(gg, a.shape).astype(a.dtype))

    return Tensor._make(np.asarray(out_data), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    return scale(sum_(a, axis, keepdims), 1.0 / float(count))


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a, shape):
    a = as_tensor(a)
    in_shape = a.shape
    out_data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(in_shape))

    return Tensor._make(out_data, (a,), backward, "reshape")


def slice_(a, idx):
    a = as_tensor(a)
    out_data = np.ascontiguousarray(a.data[idx])

    def backward(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            ga[idx] = g
            a.accumulate_grad(ga)

    return Tensor._make(out_data, (a,), backward, "slice")


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        offset = 0
        for t, s in zip(tensors, sizes):
            if t.requires_grad:
                sel = [slice(None)] * g.ndim
                sel[axis] = slice(offset, offset + s)
                t.accumulate_grad(np.ascontiguousarray(g[tuple(sel)]))
            offset += s

    return Tensor._make(out_data, tensors, backward, "concat")


def pad_zero(a, width):
    """Zero-pad; ``width`` is a full per-axis (before, after) spec."""
    a = as_tensor(a)
    out_data = np.pad(a.data, width)

    def backward(g):
        if a.requires_grad:
            sel = tuple(slice(b, dim - e) for (b, e), dim in zip(width, g.shape))
            a.accumulate_grad(np.ascontiguousarray(g[sel]))

    return Tensor._make(out_data, (a,), backward, "pad")


def interlace(a, b, axis=1):
    """Alternate slices of two equally shaped tensors along ``axis``:
    output index 2c comes from ``a``, 2c+1 from ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    check(a.shape == b.shape,
          f"interlace operands differ in shape: {a.shape} vs {b.shape}")
    stacked = np.stack([a.data, b.data], axis=axis + 1)
    new_shape = list(a.shape)
    new_shape[axis] *= 2
    out_data = stacked.reshape(new_shape)

    def backward(g):
        gs = g.reshape(stacked.shape)
        sel_a = [slice(None)] * gs.ndim
        sel_b = list(sel_a)
        sel_a[axis + 1] = 0
        sel_b[axis + 1] = 1
        if a.requires_grad:
            a.accumulate_grad(np.ascontiguousarray(gs[tuple(sel_a)]))
        if b.requires_grad:
            b.accumulate_grad(np.ascontiguousarray(gs[tuple(sel_b)]))

    return Tensor._make(out_data, (a, b), backward, "interlace")


def stack(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.accumulate_grad(np.ascontiguousarray(np.take(g, i, axis=axis)))

    return Tensor._make(out_data, tensors, backward, "stack")


__all__ = [
    "Tensor", "ShapeError", "as_tensor", "no_grad", "grad_enabled",
    "add", "mul", "scale", "relu", "sum_", "mean",
    "reshape", "slice_", "concat", "pad_zero", "interlace", "stack",
]
