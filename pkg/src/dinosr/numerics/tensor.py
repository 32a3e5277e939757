"""Dense float64 tensors with reverse-mode automatic differentiation.

Each differentiable op records its parents and a closure mapping the output
gradient to parent gradients. ``backward`` walks the graph in reverse
topological order. Only the primitives the encoder and loss need are
provided.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every requires_grad ancestor."""
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    # local grads for this pass; ``.grad`` only ever accumulates
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        # never mutated in place, so aliasing g is safe
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    xd = x.data
    x2 = xd * xd
    t = x2 * (0.044715 * _GELU_C)
    t += _GELU_C
    t *= xd
    np.tanh(t, out=t)
    out = t + 1.0
    out *= xd
    out *= 0.5

    def bw(g):
        # d/dx = 0.5 (1 + t) + 0.5 x (1 - t^2) c (1 + 3a x^2)
        du = x2 * (3 * 0.044715 * _GELU_C)
        du += _GELU_C
        du *= xd
        sech2 = t * t
        np.subtract(1.0, sech2, out=sech2)
        du *= sech2
        du += 1.0
        du += t
        du *= g
        du *= 0.5
        return (du,)

    return _make(out, (x,), bw)


# reductions and shape ------------------------------------------------------

def tsum(a: Tensor, axis=None) -> Tensor:
    out = np.sum(a.data, axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), bw)


def mean(a: Tensor, axis=None) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis), 1.0 / float(count))


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)


def getitem(a: Tensor, index) -> Tensor:
    basic = _is_basic(index)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(a.data[index]), (a,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def embedding(table: Tensor, indices) -> Tensor:
    """Row lookup ``table[indices]``."""
    indices = np.asarray(indices, dtype=np.int64)
    return getitem(table, indices)


def where(mask, a, b) -> Tensor:
    """Select ``a`` where mask is true, else ``b`` (mask is constant)."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, a.data, b.data)

    def bw(g):
        return (
            _unbroadcast(np.where(mask, g, 0.0), a.shape),
            _unbroadcast(np.where(mask, 0.0, g), b.shape),
        )

    return _make(out, (a, b), bw)


# linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product; leading axes of ``a`` broadcast against a 2-D ``b``,
    or batch axes must agree when both are >= 3-D."""
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def bw(g):
        if b.ndim == 1:
            ga = np.multiply.outer(g, b.data)
            gb = np.tensordot(g, a.data, axes=(list(range(g.ndim)), list(range(a.ndim - 1))))
            return ga, gb
        ga = g @ np.swapaxes(b.data, -1, -2)
        if a.ndim == 1:
            gb = np.multiply.outer(a.data, g)
        elif b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return _unbroadcast(ga, a.shape), gb

    return _make(out, (a, b), bw)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, stride: int) -> Tensor:
    """Valid 1-D convolution.

    x: (C_in, L); weight: (C_out, C_in, W); bias: (C_out,). Returns (C_out, L_out)
    with ``L_out = (L - W) // stride + 1``.
    """
    c_in, length = x.shape
    c_out, c_in_w, width = weight.shape
    if c_in != c_in_w:
        raise ValueError(f"conv1d channel mismatch: {c_in} vs {c_in_w}")
    if length < width:
        raise ValueError(f"conv1d input length {length} shorter than kernel {width}")
    l_out = (length - width) // stride + 1
    # (L_out, W) gather indices
    idx = np.arange(l_out)[:, None] * stride + np.arange(width)[None, :]
    cols = x.data[:, idx]  # (C_in, L_out, W)
    cols2 = cols.transpose(1, 0, 2).reshape(l_out, c_in * width)
    w2 = weight.data.reshape(c_out, c_in * width)
    out = (cols2 @ w2.T).T + bias.data[:, None]

    def bw(g):
        gw = (g @ cols2).reshape(weight.shape)
        gb = g.sum(axis=1)
        gcols = (g.T @ w2).reshape(l_out, c_in, width).transpose(1, 0, 2)
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), idx), gcols)
        return gx, gw, gb

    return _make(out, (x, weight, bias), bw)


# normalisation and probability --------------------------------------------

def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        d = x.shape[-1]
        gxhat = g * gamma.data
        gx = inv / d * (
            d * gxhat
            - gxhat.sum(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)
        )
        ggamma = (g * xhat).reshape(-1, d).sum(axis=0)
        gbeta = g.reshape(-1, d).sum(axis=0)
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), bw)


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")


def softmax(x, axis: int = -1, check: bool = True) -> Tensor:
    x = as_tensor(x)
    if check:
        _check_finite(x.data)
    p = x.data - x.data.max(axis=axis, keepdims=True)
    np.exp(p, out=p)
    p /= p.sum(axis=axis, keepdims=True)

    def bw(g):
        gp = g * p
        row = gp.sum(axis=axis, keepdims=True)
        gp -= p * row
        return (gp,)

    return _make(p, (x,), bw)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def cross_entropy(logits, target) -> Tensor:
    """Summed ``-log softmax(logits)[target]`` (natural log).

    ``logits`` is a length-V vector with an integer target, or an (M, V)
    matrix with M integer targets; rows are summed.
    """
    logits = as_tensor(logits)
    _check_finite(logits.data)
    squeeze = logits.ndim == 1
    z = logits.data[None, :] if squeeze else logits.data
    t = np.atleast_1d(np.asarray(target))
    if t.shape != (z.shape[0],):
        raise ValueError(f"expected {z.shape[0]} targets, got shape {t.shape}")
    if not np.issubdtype(t.dtype, np.integer):
        raise TypeError("targets must be integer indices")
    v = z.shape[1]
    if np.any(t < 0) or np.any(t >= v):
        raise IndexError(f"target out of range [0, {v})")
    logp = log_softmax(z)
    rows = np.arange(z.shape[0])
    loss = -logp[rows, t].sum()

    def bw(g):
        grad = np.exp(logp)
        grad[rows, t] -= 1.0
        grad *= g
        return (grad[0] if squeeze else grad,)

    return _make(np.asarray(loss), (logits,), bw)
