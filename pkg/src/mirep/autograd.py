"""Reverse-mode automatic differentiation over numpy arrays.

Just enough of an engine for the models in this package: a Tensor wraps an
ndarray, records its parents and a backward closure when gradients are
required, and backward() walks the graph once in topological order.  The
design follows the usual minimal-autodiff recipe (scalar engines scaled up to
ndarrays); broadcasting is handled by summing gradient axes back to the
parent's shape.

Dtype policy: whatever dtype flows in flows through. Tests run the whole graph
in float64 so central finite differences are meaningful; training runs float32.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

__all__ = ["Tensor", "parameter", "constant", "gelu", "softmax", "layer_norm", "dropout"]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g over the axes that broadcasting introduced, back to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    # -- graph plumbing ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = _unbroadcast(np.asarray(g), self.data.shape)
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() starts from a scalar loss")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = self._lift(other)
        out = _node(self.data + other.data, (self, other))
        if out.requires_grad:
            def bw(g, a=self, b=other):
                a.accumulate(g)
                b.accumulate(g)
            out._backward = bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = _node(-self.data, (self,))
        if out.requires_grad:
            out._backward = lambda g, a=self: a.accumulate(-g)
        return out

    def __sub__(self, other):
        other = self._lift(other)
        out = _node(self.data - other.data, (self, other))
        if out.requires_grad:
            def bw(g, a=self, b=other):
                a.accumulate(g)
                b.accumulate(-g)
            out._backward = bw
        return out

    def __rsub__(self, other):
        return self._lift(other).__sub__(self)

    def __mul__(self, other):
        other = self._lift(other)
        out = _node(self.data * other.data, (self, other))
        if out.requires_grad:
            def bw(g, a=self, b=other):
                a.accumulate(g * b.data)
                b.accumulate(g * a.data)
            out._backward = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        out = _node(self.data / other.data, (self, other))
        if out.requires_grad:
            def bw(g, a=self, b=other):
                a.accumulate(g / b.data)
                b.accumulate(-g * a.data / (b.data * b.data))
            out._backward = bw
        return out

    def __rtruediv__(self, other):
        return self._lift(other).__truediv__(self)

    def __pow__(self, c):
        if not isinstance(c, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = _node(self.data ** c, (self,))
        if out.requires_grad:
            out._backward = lambda g, a=self: a.accumulate(g * c * a.data ** (c - 1))
        return out

    def __matmul__(self, other):
        other = self._lift(other)
        if self.data.ndim < 2 or other.data.ndim < 2:
            raise ValueError("matmul operands must be at least 2-D")
        out = _node(self.data @ other.data, (self, other))
        if out.requires_grad:
            def bw(g, a=self, b=other):
                a.accumulate(g @ b.data.swapaxes(-1, -2))
                b.accumulate(a.data.swapaxes(-1, -2) @ g)
            out._backward = bw
        return out

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _node(self.data.reshape(shape), (self,))
        if out.requires_grad:
            out._backward = lambda g, a=self: a.accumulate(g.reshape(a.data.shape))
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        out = _node(self.data.transpose(axes), (self,))
        if out.requires_grad:
            out._backward = lambda g, a=self, inv=inv: a.accumulate(g.transpose(inv))
        return out

    def __getitem__(self, key):
        _check_basic_index(key)
        out = _node(self.data[key], (self,))
        if out.requires_grad:
            def bw(g, a=self, key=key):
                if not a.requires_grad:
                    return
                full = np.zeros_like(a.data)
                full[key] += g
                a.accumulate(full)
            out._backward = bw
        return out

    # -- reductions and pointwise -------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = _node(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            def bw(g, a=self, axis=axis, keepdims=keepdims):
                gg = np.asarray(g)
                if axis is not None and not keepdims:
                    gg = np.expand_dims(gg, axis)
                a.accumulate(np.broadcast_to(gg, a.data.shape))
            out._backward = bw
        return out

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else _axis_size(self.data.shape, axis)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def exp(self):
        out = _node(np.exp(self.data), (self,))
        if out.requires_grad:
            out._backward = lambda g, a=self, d=out.data: a.accumulate(g * d)
        return out

    def log(self):
        out = _node(np.log(self.data), (self,))
        if out.requires_grad:
            out._backward = lambda g, a=self: a.accumulate(g / a.data)
        return out

    def sqrt(self):
        out = _node(np.sqrt(self.data), (self,))
        if out.requires_grad:
            out._backward = lambda g, a=self, d=out.data: a.accumulate(g * 0.5 / d)
        return out

    def erf(self):
        out = _node(special.erf(self.data), (self,))
        if out.requires_grad:
            k = 2.0 / math.sqrt(math.pi)
            def bw(g, a=self, k=k):
                a.accumulate(g * k * np.exp(-a.data * a.data))
            out._backward = bw
        return out

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


def _node(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    return out


def _axis_size(shape, axis) -> int:
    if isinstance(axis, int):
        return shape[axis]
    n = 1
    for ax in axis:
        n *= shape[ax]
    return n


def _check_basic_index(key) -> None:
    parts = key if isinstance(key, tuple) else (key,)
    for p in parts:
        if not isinstance(p, (int, slice, type(None), type(Ellipsis))):
            raise TypeError("only basic (slice/int) indexing is differentiable here")


def parameter(data, name: str) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True, name=name)


def constant(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))


# -- composite layers --------------------------------------------------------

def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit, 0.5 x (1 + erf(x / sqrt 2))."""
    return x * 0.5 * ((x * (1.0 / math.sqrt(2.0))).erf() + 1.0)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Shift-stable softmax; the subtracted max is treated as a constant."""
    shift = Tensor(np.max(x.data, axis=axis, keepdims=True))
    e = (x - shift).exp()
    return e / e.sum(axis=axis, keepdims=True)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / (var + eps).sqrt() * gamma + beta


def dropout(x: Tensor, p: float, rng: np.random.Generator | None,
            train: bool) -> Tensor:
    """Inverted dropout: scaling happens at train time, eval is the identity."""
    if not train or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype)
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.data.dtype)
    return x * Tensor(keep * scale)
