"""Minimal define-by-run reverse-mode autodiff over float64 numpy arrays.

A :class:`Tape` records every operation whose inputs live on it.  Nodes are
appended in execution order, so the node list is already topologically
sorted and :meth:`Tape.backward` just walks it in reverse.  Values that do
not live on a tape (constants, or parameters during inference) flow through
the same op functions without recording anything.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "NonFiniteError",
    "ShapeError",
    "Tape",
    "Tensor",
    "add",
    "concat",
    "conv1d",
    "div",
    "dropout",
    "embedding",
    "exp",
    "layer_norm",
    "log",
    "matmul",
    "mean",
    "mul",
    "relu",
    "scale",
    "slice_cols",
    "softmax",
    "sub",
    "sum_",
    "transpose",
]


class ShapeError(ValueError):
    """Raised when an op receives operands of incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """Raised by a debug tape when an op produces NaN or Inf."""


@dataclass
class _Node:
    kind: str
    inputs: tuple[int | None, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    shape: tuple[int, ...]
    name: str | None = None


@dataclass
class Tape:
    """Operation log for one forward pass.

    ``debug=True`` validates that every recorded value is finite.
    ``visits`` counts node visits during the last backward pass.
    """

    debug: bool = False
    nodes: list[_Node] = field(default_factory=list)
    visits: int = 0

    def variable(self, value, name: str | None = None) -> "Tensor":
        value = np.array(value, dtype=np.float64)
        self.nodes.append(_Node("leaf", (), None, value.shape, name))
        return Tensor(value, self, len(self.nodes) - 1)

    def record(self, kind, value, inputs, backward) -> "Tensor":
        if self.debug and not np.all(np.isfinite(value)):
            raise NonFiniteError(f"{kind} produced non-finite values")
        ids = tuple(t.node if t.tape is self else None for t in inputs)
        self.nodes.append(_Node(kind, ids, backward, value.shape))
        return Tensor(value, self, len(self.nodes) - 1)

    def backward(self, loss: "Tensor") -> list[np.ndarray | None]:
        """Backpropagate from a scalar ``loss``; returns one gradient per node.

        Nodes that the loss does not depend on get ``None``.
        """
        if loss.tape is not self:
            raise ValueError("loss was not produced on this tape")
        if loss.value.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.node] = np.ones_like(loss.value)
        self.visits = 0
        for idx in range(loss.node, -1, -1):
            g = grads[idx]
            node = self.nodes[idx]
            if g is None or node.backward is None:
                continue
            self.visits += 1
            for parent, pg in zip(node.inputs, node.backward(g)):
                if parent is None or pg is None:
                    continue
                if grads[parent] is None:
                    grads[parent] = pg
                else:
                    grads[parent] = grads[parent] + pg
        return grads


class Tensor:
    """A float64 array, optionally tied to a node on a :class:`Tape`."""

    __slots__ = ("value", "tape", "node", "aux")

    def __init__(self, value, tape: Tape | None = None, node: int | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.node = node
        self.aux = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def __repr__(self):
        where = f"node={self.node}" if self.tape is not None else "const"
        return f"Tensor(shape={self.shape}, {where})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(kind: str, value: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    tape = next((t.tape for t in inputs if t.tape is not None), None)
    if tape is None:
        return Tensor(value)
    for t in inputs:
        if t.tape is not None and t.tape is not tape:
            raise ValueError(f"{kind}: inputs recorded on different tapes")
    return tape.record(kind, value, inputs, backward)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(kind: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot combine shapes {a.shape} and {b.shape}") from None


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)
    av, bv = a.value, b.value
    return _emit("mul", av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("div", a, b)
    av, bv = a.value, b.value
    out = av / bv

    def backward(g):
        return _unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)

    return _emit("div", out, (a, b), backward)


def scale(a, s) -> Tensor:
    """Multiply ``a`` by a scalar tensor ``s`` (shape ``()``)."""
    a, s = _as_tensor(a), _as_tensor(s)
    if s.value.size != 1:
        raise ShapeError(f"scale: expected a scalar factor, got shape {s.shape}")
    av, sv = a.value, s.value
    return _emit("scale", av * sv, (a, s),
                 lambda g: (g * sv, np.reshape(np.sum(g * av), sv.shape)))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.value)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    av = a.value
    return _emit("log", np.log(av), (a,), lambda g: (g / av,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.value > 0
    return _emit("relu", a.value * mask, (a,), lambda g: (g * mask,))


def dropout(a, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    a = _as_tensor(a)
    if rng is None or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _emit("dropout", a.value * keep, (a,), lambda g: (g * keep,))


# -- reductions and shape ops -----------------------------------------------


def sum_(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    if axis is None:
        return _emit("sum", np.sum(a.value), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))
    out = np.sum(a.value, axis=axis)
    return _emit("sum", out, (a,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def mean(a) -> Tensor:
    a = _as_tensor(a)
    n = a.value.size
    shape = a.shape
    return _emit("mean", np.mean(a.value), (a,), lambda g: (np.full(shape, g / n),))


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.value.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.shape}")
    return _emit("transpose", a.value.T.copy(), (a,), lambda g: (g.T.copy(),))


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    if a.value.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice: columns [{start}:{stop}] out of range for shape {a.shape}")
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _emit("slice", a.value[:, start:stop].copy(), (a,), backward)


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.value for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _emit("concat", out, ts, backward)


def embedding(table, ids) -> Tensor:
    """Row gather ``table[ids]``; also serves as a generic row selector."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.value.ndim != 2:
        raise ShapeError(f"embedding: table must be a matrix, got shape {table.shape}")
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"embedding: ids out of range for table with {n} rows")
    shape = table.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, ids, g)
        return (full,)

    return _emit("embedding", table.value[ids], (table,), backward)


# -- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    return _emit("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def softmax(a) -> Tensor:
    """Row-wise softmax of a matrix."""
    a = _as_tensor(a)
    z = a.value - a.value.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - np.sum(g * p, axis=-1, keepdims=True)),)

    return _emit("softmax", p, (a,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize each row of ``x`` then apply a per-channel affine map."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias shapes {gamma.shape}, {beta.shape} for width {d}")
    mu = x.value.mean(axis=-1, keepdims=True)
    xc = x.value - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gv = gamma.value

    def backward(g):
        gx = g * gv
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _emit("layer_norm", xhat * gv + beta.value, (x, gamma, beta), backward)


def conv1d(x, w, b, dilation: int = 1) -> Tensor:
    """'Same'-padded 1-D convolution over time.

    ``x`` is (T, C_in), ``w`` is (K, C_in, C_out) with odd K, ``b`` is (C_out,).
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if w.value.ndim != 3 or x.value.ndim != 2 or w.shape[1] != x.shape[1] or w.shape[0] % 2 == 0:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with kernel {w.shape}")
    if b.shape != (w.shape[2],):
        raise ShapeError(f"conv1d: bias shape {b.shape} does not match kernel {w.shape}")
    k, cin, cout = w.shape
    t = x.shape[0]
    pad = dilation * (k // 2)
    xp = np.zeros((t + 2 * pad, cin))
    xp[pad: pad + t] = x.value
    # cols[t, k*cin + c] = xp[t + k*dilation, c]
    cols = np.concatenate([xp[i * dilation: i * dilation + t] for i in range(k)], axis=1)
    wm = w.value.reshape(k * cin, cout)
    out = cols @ wm + b.value

    def backward(g):
        dcols = g @ wm.T
        dxp = np.zeros_like(xp)
        for i in range(k):
            dxp[i * dilation: i * dilation + t] += dcols[:, i * cin:(i + 1) * cin]
        dx = dxp[pad: pad + t] if pad else dxp
        return dx, (cols.T @ g).reshape(k, cin, cout), g.sum(axis=0)

    return _emit("conv1d", out, (x, w, b), backward)
