"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps a float64 ndarray and remembers how it was
computed; :func:`backward` walks the graph in reverse topological order
and accumulates vector-Jacobian products into ``.grad``.  Only the
operations the transformer needs exist here, each with a hand-written
VJP; softmax and log-softmax get dedicated stable derivatives instead of
being composed from primitives.

All arithmetic is double precision.  Inside :func:`no_grad`, operations
produce constants and build no graph.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad and _grad_enabled
        self._parents = parents if self.requires_grad else ()
        self._vjp = vjp if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(parent: Tensor, grad: np.ndarray) -> None:
    if not parent.requires_grad:
        return
    if parent.grad is None:
        parent.grad = grad.copy()
    else:
        parent.grad = parent.grad + grad


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(data, parents, vjp) -> Tensor:
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=requires, parents=parents, vjp=vjp)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def vjp(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def vjp(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def vjp(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), vjp)


def power(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data**exponent

    def vjp(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1.0))

    return _make(out_data, (a,), vjp)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must have rank >= 2")
    out_data = a.data @ b.data

    def vjp(g):
        _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _make(out_data, (a, b), vjp)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)

    def vjp(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _make(out_data, (a,), vjp)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out_data = a.data.transpose(axes)

    def vjp(g):
        _accumulate(a, g.transpose(inverse))

    return _make(out_data, (a,), vjp)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        grad = g
        if not keepdims and axis is not None:
            grad = np.expand_dims(grad, axis)
        _accumulate(a, np.broadcast_to(grad, a.data.shape).copy())

    return _make(out_data, (a,), vjp)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        count = a.data.size
    elif isinstance(axis, int):
        count = a.data.shape[axis]
    else:
        count = int(np.prod([a.data.shape[ax] for ax in axis]))
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def vjp(g):
        _accumulate(a, g * (a.data > 0.0))

    return _make(out_data, (a,), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    out_data = exp / exp.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        _accumulate(a, out_data * (g - inner))

    return _make(out_data, (a,), vjp)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - log_z

    def vjp(g):
        _accumulate(a, g - np.exp(out_data) * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (a,), vjp)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather; the VJP scatter-adds into the table."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValueError("embedding ids must be integers")
    out_data = table.data[ids]

    def vjp(g):
        if not table.requires_grad:
            return
        acc = np.zeros_like(table.data)
        np.add.at(acc, ids, g)
        _accumulate(table, acc)

    return _make(out_data, (table,), vjp)


def take_index(a: Tensor, idx: np.ndarray) -> Tensor:
    """out[n] = a[n, idx[n]] for a 2-D tensor; scatter-add VJP."""
    idx = np.asarray(idx)
    if a.data.ndim != 2 or idx.ndim != 1 or idx.shape[0] != a.data.shape[0]:
        raise ValueError("take_index expects a [N, V] tensor and [N] indices")
    rows = np.arange(a.data.shape[0])
    out_data = a.data[rows, idx]

    def vjp(g):
        if not a.requires_grad:
            return
        acc = np.zeros_like(a.data)
        np.add.at(acc, (rows, idx), g)
        _accumulate(a, acc)

    return _make(out_data, (a,), vjp)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is 0."""
    if not training or rate <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    return mul(a, Tensor(keep))


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(x) into ``.grad`` of every reachable tensor."""
    if loss.data.size != 1:
        raise ValueError("backward starts from a scalar")
    if not loss.requires_grad:
        raise ValueError("loss does not require grad")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._vjp is not None and node.grad is not None:
            node._vjp(node.grad)
