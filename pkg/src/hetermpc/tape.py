"""Dense float tensors with a dynamic reverse-mode autodiff tape.

Design: record-on-execute. While a ComputationTape is active (as a context
manager), every op whose result needs gradients appends a (output, parents,
backward_fn) entry. ``ComputationTape.backward`` walks the entries once in
reverse execution order, accumulating gradients additively into ``.grad``.
Backward functions are plain numpy closures, so nothing re-records during
the backward pass. The active tape is thread-local; independent tapes may
run on separate threads.

Storage is float32 by default. Float64 can be selected (``using_dtype``)
so finite-difference gradient checks have enough precision to be meaningful.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from .kernels import (
    gelu_bwd,
    gelu_fwd,
    layer_norm_bwd,
    layer_norm_fwd,
    softmax_bwd,
    softmax_fwd,
)

_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_DEFAULT_DTYPE = np.dtype(np.float32)


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype):
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in _ALLOWED_DTYPES:
        raise ValueError(f"unsupported dtype {dt}; use float32 or float64")
    _DEFAULT_DTYPE = dt


@contextmanager
def using_dtype(dtype):
    """Temporarily switch the default tensor dtype."""
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


class Tensor:
    """A dense array plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @classmethod
    def _wrap(cls, data, requires_grad):
        t = object.__new__(cls)
        t.data = data
        t.grad = None
        t.requires_grad = requires_grad
        return t

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

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, dtype=None):
    """A trainable Tensor."""
    return Tensor(data, requires_grad=True, dtype=dtype)


def constant(data, dtype=None):
    """A non-trainable Tensor."""
    return Tensor(data, requires_grad=False, dtype=dtype)


def zeros(shape, dtype=None):
    return Tensor(np.zeros(shape, dtype=dtype or _DEFAULT_DTYPE))


# ---------------------------------------------------------------------------
# tape machinery

class _TapeStack(threading.local):
    def __init__(self):
        self.stack = []


_tls = _TapeStack()


class ComputationTape:
    """Ordered record of executed ops for one forward pass."""

    def __init__(self):
        self._ops = []
        self._used = False

    def __enter__(self):
        _tls.stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tls.stack.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._ops)

    def backward(self, loss):
        """Populate .grad of every requires_grad tensor reachable from loss."""
        if loss.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        if self._used:
            raise RuntimeError("this tape has already been backpropagated")
        self._used = True
        loss.grad = np.ones_like(loss.data)
        for out, parents, backward_fn in reversed(self._ops):
            gout = out.grad
            if gout is None:
                continue
            for p, g in zip(parents, backward_fn(gout)):
                if g is None or not p.requires_grad:
                    continue
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
                p.grad += g


def active_tape():
    return _tls.stack[-1] if _tls.stack else None


def backward(loss):
    """Backpropagate through the innermost active tape."""
    t = active_tape()
    if t is None:
        raise RuntimeError("backward() called with no active ComputationTape")
    t.backward(loss)


def _record(out, parents, backward_fn):
    t = _tls.stack[-1] if _tls.stack else None
    if t is not None and out.requires_grad:
        t._ops.append((out, parents, backward_fn))


def _result(data, parents, backward_fn):
    out = Tensor._wrap(data, any(p.requires_grad for p in parents))
    _record(out, parents, backward_fn)
    return out


def _unbroadcast(g, shape):
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitive ops

def add(a, b):
    if not isinstance(b, Tensor):
        data = a.data + np.asarray(b, dtype=a.data.dtype)
        return _result(data, (a,), lambda g: (_unbroadcast(g, a.data.shape),))
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result(data, (a, b), bwd)


def sub(a, b):
    if not isinstance(b, Tensor):
        return add(a, -np.asarray(b))
    data = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _result(data, (a, b), bwd)


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    if not isinstance(b, Tensor):
        bv = np.asarray(b, dtype=a.data.dtype)
        return _result(a.data * bv, (a,), lambda g: (_unbroadcast(g * bv, a.data.shape),))
    data = a.data * b.data

    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _result(data, (a, b), bwd)


def matmul(a, b):
    """Matrix product of equal-rank stacks (2-d or batched 3-d)."""
    ash, bsh = a.data.shape, b.data.shape
    if a.data.ndim < 2 or a.data.ndim != b.data.ndim or ash[-1] != bsh[-2] or ash[:-2] != bsh[:-2]:
        raise ValueError(f"matmul shape mismatch: {ash} x {bsh}")
    data = a.data @ b.data

    def bwd(g):
        return g @ b.data.swapaxes(-1, -2), a.data.swapaxes(-1, -2) @ g

    return _result(data, (a, b), bwd)


def reshape(a, shape):
    data = a.data.reshape(shape)
    return _result(data, (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def narrow(a, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = a.data[idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _result(data, (a,), bwd)


def take_rows(a, indices):
    """Gather rows by integer index (duplicates allowed); axis 0."""
    idx = np.asarray(indices, dtype=np.intp)
    data = a.data[idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _result(data, (a,), bwd)


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of an empty sequence")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    out = Tensor._wrap(data, any(t.requires_grad for t in tensors))
    _record(out, tuple(tensors), bwd)
    return out


def sum_(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _result(data, (a,), bwd)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# kernel-backed ops

def softmax(a):
    """Stable softmax over the last axis."""
    if a.data.shape[-1] == 0:
        raise ValueError("softmax over an empty axis")
    flat = np.ascontiguousarray(a.data.reshape(-1, a.data.shape[-1]))
    y = softmax_fwd(flat)
    data = y.reshape(a.data.shape)

    def bwd(g):
        gflat = np.ascontiguousarray(g.reshape(y.shape))
        return (softmax_bwd(gflat, y).reshape(a.data.shape),)

    return _result(data, (a,), bwd)


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    d = a.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ValueError(
            f"layer_norm affine shape mismatch: input last dim {d}, "
            f"gain {gain.data.shape}, bias {bias.data.shape}"
        )
    flat = np.ascontiguousarray(a.data.reshape(-1, d))
    y, mu, rstd = layer_norm_fwd(flat, np.ascontiguousarray(gain.data),
                                 np.ascontiguousarray(bias.data), eps)
    data = y.reshape(a.data.shape)

    def bwd(g):
        gflat = np.ascontiguousarray(g.reshape(-1, d))
        dx, dgain, dbias = layer_norm_bwd(gflat, flat, gain.data, mu, rstd)
        return dx.reshape(a.data.shape), dgain, dbias

    return _result(data, (a, gain, bias), bwd)


def gelu(a):
    flat = np.ascontiguousarray(a.data.reshape(-1))
    data = gelu_fwd(flat).reshape(a.data.shape)

    def bwd(g):
        gflat = np.ascontiguousarray(g.reshape(-1))
        return (gelu_bwd(gflat, flat).reshape(a.data.shape),)

    return _result(data, (a,), bwd)


def cross_entropy(logits, targets, ignore_index=None):
    """Mean negative log-softmax probability over non-ignored positions.

    logits: (n, V); targets: length-n integer sequence. Positions whose
    target equals ignore_index contribute nothing to loss or gradient.
    """
    if logits.data.ndim != 2:
        raise ValueError(f"cross_entropy expects 2-d logits, got shape {logits.data.shape}")
    n, vocab = logits.data.shape
    tgt = np.asarray(targets, dtype=np.intp)
    if tgt.shape != (n,):
        raise ValueError(f"targets length {tgt.shape} does not match logits rows {n}")
    keep = np.ones(n, dtype=bool) if ignore_index is None else tgt != ignore_index
    if not keep.any():
        raise ValueError("cross_entropy: every position is ignored, mean is undefined")
    checked = tgt[keep]
    if checked.min() < 0 or checked.max() >= vocab:
        raise ValueError(f"target id out of range [0, {vocab})")

    x = logits.data
    m = x.max(axis=1, keepdims=True)
    ex = np.exp(x - m)
    sumex = ex.sum(axis=1, keepdims=True)
    lse = (m + np.log(sumex)).reshape(-1)
    per_pos = lse - x[np.arange(n), np.where(keep, tgt, 0)]
    n_keep = int(keep.sum())
    data = np.asarray(per_pos[keep].mean(), dtype=x.dtype)

    def bwd(g):
        p = ex / sumex
        p[np.arange(n), np.where(keep, tgt, 0)] -= 1.0
        p[~keep] = 0.0
        return (p * (g / n_keep),)

    return _result(data, (logits,), bwd)
