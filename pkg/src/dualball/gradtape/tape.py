"""Reverse-mode differentiation over numpy arrays.

A :class:`Var` wraps an ``ndarray`` value and records the operation that
produced it.  Calling :func:`backward` on a scalar ``Var`` walks the graph in
reverse topological order and accumulates ``.grad`` on every node that
requires a gradient.  Only the operators the models in this package use are
provided.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError

ARTANH_MAX = 1.0 - 1e-15
MIN_NORM = 1e-15


class Var:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100.0

    def __init__(self, value, parents: tuple = (), backward: Callable | None = None,
                 requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=float)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Var{tag}(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.value

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Var":
        return Var(self.value)

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def parameter(value, name: str | None = None) -> Var:
    return Var(np.array(value, dtype=float), requires_grad=True, name=name)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _make(value, parents: Sequence[Var], backward) -> Var:
    req = any(p.requires_grad for p in parents)
    out = Var(value, parents=tuple(parents) if req else (), requires_grad=req)
    if req:
        out._backward = lambda: backward(out)
    return out


def _acc(v: Var, g: np.ndarray):
    if not v.requires_grad:
        return
    g = _unbroadcast(g, v.value.shape)
    if v.grad is None:
        v.grad = np.array(g, dtype=float, copy=True)
    else:
        v.grad = v.grad + g


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def bw(out):
        _acc(a, out.grad)
        _acc(b, out.grad)

    return _make(a.value + b.value, (a, b), bw)


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def bw(out):
        _acc(a, out.grad)
        _acc(b, -out.grad)

    return _make(a.value - b.value, (a, b), bw)


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def bw(out):
        _acc(a, out.grad * b.value)
        _acc(b, out.grad * a.value)

    return _make(a.value * b.value, (a, b), bw)


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def bw(out):
        _acc(a, out.grad / b.value)
        _acc(b, -out.grad * a.value / b.value**2)

    return _make(a.value / b.value, (a, b), bw)


def power(a, p: float) -> Var:
    a = as_var(a)

    def bw(out):
        _acc(a, out.grad * p * a.value ** (p - 1))

    return _make(a.value**p, (a,), bw)


def square(a) -> Var:
    return power(a, 2.0)


def maximum(a, b) -> Var:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = as_var(a), as_var(b)
    pick_a = a.value >= b.value

    def bw(out):
        _acc(a, np.where(pick_a, out.grad, 0.0))
        _acc(b, np.where(pick_a, 0.0, out.grad))

    return _make(np.where(pick_a, a.value, b.value), (a, b), bw)


def minimum(a, b) -> Var:
    return -maximum(-as_var(a), -as_var(b))


# -- elementwise functions ---------------------------------------------------

def tanh(a) -> Var:
    a = as_var(a)
    y = np.tanh(a.value)

    def bw(out):
        _acc(a, out.grad * (1.0 - y**2))

    return _make(y, (a,), bw)


def artanh(a) -> Var:
    """``artanh`` with the argument clamped to ``+-(1 - 1e-15)``."""
    a = as_var(a)
    x = np.clip(a.value, -ARTANH_MAX, ARTANH_MAX)
    inside = np.abs(a.value) <= ARTANH_MAX

    def bw(out):
        _acc(a, np.where(inside, out.grad / (1.0 - x**2), 0.0))

    return _make(np.arctanh(x), (a,), bw)


def relu(a) -> Var:
    a = as_var(a)
    pos = a.value > 0

    def bw(out):
        _acc(a, out.grad * pos)

    return _make(np.where(pos, a.value, 0.0), (a,), bw)


def exp(a) -> Var:
    a = as_var(a)
    y = np.exp(a.value)

    def bw(out):
        _acc(a, out.grad * y)

    return _make(y, (a,), bw)


def log(a) -> Var:
    a = as_var(a)

    def bw(out):
        _acc(a, out.grad / a.value)

    return _make(np.log(a.value), (a,), bw)


def sqrt(a) -> Var:
    a = as_var(a)
    y = np.sqrt(a.value)

    def bw(out):
        _acc(a, out.grad * 0.5 / y)

    return _make(y, (a,), bw)


def vabs(a) -> Var:
    a = as_var(a)

    def bw(out):
        _acc(a, out.grad * np.sign(a.value))

    return _make(np.abs(a.value), (a,), bw)


# -- reductions and shape ----------------------------------------------------

def vsum(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)
    shape = a.value.shape

    def bw(out):
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, shape))

    return _make(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)
    if axis is None:
        count = a.value.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.value.shape[i] for i in axes]))
    return vsum(a, axis, keepdims) * (1.0 / count)


def norm(a, axis=-1, keepdims=True) -> Var:
    """Euclidean norm; the gradient at the zero vector is taken to be zero."""
    a = as_var(a)
    n = np.sqrt(np.sum(a.value**2, axis=axis, keepdims=True))

    def bw(out):
        g = out.grad if keepdims else np.expand_dims(out.grad, axis)
        _acc(a, g * a.value / np.maximum(n, MIN_NORM))

    val = n if keepdims else np.squeeze(n, axis=axis)
    return _make(val, (a,), bw)


def reshape(a, shape) -> Var:
    a = as_var(a)
    old = a.value.shape

    def bw(out):
        _acc(a, out.grad.reshape(old))

    return _make(a.value.reshape(shape), (a,), bw)


def swapaxes(a, i: int, j: int) -> Var:
    a = as_var(a)

    def bw(out):
        _acc(a, np.swapaxes(out.grad, i, j))

    return _make(np.swapaxes(a.value, i, j), (a,), bw)


def getitem(a, idx) -> Var:
    a = as_var(a)

    def bw(out):
        g = np.zeros_like(a.value)
        np.add.at(g, idx, out.grad)
        _acc(a, g)

    return _make(a.value[idx], (a,), bw)


def concat(items: Sequence, axis: int = -1) -> Var:
    items = [as_var(x) for x in items]
    sizes = [x.value.shape[axis] for x in items]
    splits = np.cumsum(sizes)[:-1]

    def bw(out):
        for x, g in zip(items, np.split(out.grad, splits, axis=axis)):
            _acc(x, g)

    return _make(np.concatenate([x.value for x in items], axis=axis), items, bw)


def stack(items: Sequence, axis: int = 0) -> Var:
    items = [as_var(x) for x in items]

    def bw(out):
        for k, x in enumerate(items):
            _acc(x, np.take(out.grad, k, axis=axis))

    return _make(np.stack([x.value for x in items], axis=axis), items, bw)


def where(cond, a, b) -> Var:
    a, b = as_var(a), as_var(b)
    cond = np.asarray(cond, dtype=bool)

    def bw(out):
        _acc(a, np.where(cond, out.grad, 0.0))
        _acc(b, np.where(cond, 0.0, out.grad))

    return _make(np.where(cond, a.value, b.value), (a, b), bw)


# -- linear algebra and normalisers -------------------------------------------

def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ContractError("matmul operands must have at least two dimensions")

    def bw(out):
        _acc(a, out.grad @ np.swapaxes(b.value, -1, -2))
        _acc(b, np.swapaxes(a.value, -1, -2) @ out.grad)

    return _make(a.value @ b.value, (a, b), bw)


def softmax(a, axis: int = -1) -> Var:
    a = as_var(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(out):
        g = out.grad
        _acc(a, s * (g - np.sum(g * s, axis=axis, keepdims=True)))

    return _make(s, (a,), bw)


def log_softmax(a, axis: int = -1) -> Var:
    a = as_var(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    s = np.exp(y)

    def bw(out):
        g = out.grad
        _acc(a, g - s * np.sum(g, axis=axis, keepdims=True))

    return _make(y, (a,), bw)


# -- driver ------------------------------------------------------------------

def _topo(root: Var) -> list[Var]:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(root: Var, params: Iterable[Var] | None = None) -> list[np.ndarray] | None:
    """Populate ``.grad`` for every node reachable from the scalar ``root``.

    Gradients accumulate, so call :func:`zero_grad` between independent
    passes.  When ``params`` is given, their gradients are returned in order
    (zeros for parameters the root does not depend on).
    """
    if root.value.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.value.shape}")
    if root.requires_grad:
        root.grad = np.ones_like(root.value)
        order = _topo(root)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()
        # free intermediate buffers; parameters keep theirs
        for node in order:
            if node._parents:
                node.grad = None
    if params is None:
        return None
    return [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]


def gradients(root: Var, params: Sequence[Var]) -> list[np.ndarray]:
    """Fresh gradients of ``root`` for ``params`` (previous ``.grad`` discarded)."""
    params = list(params)
    zero_grad(params)
    out = backward(root, params)
    zero_grad(params)
    return out


def zero_grad(params: Iterable[Var]):
    for p in params:
        p.grad = None
