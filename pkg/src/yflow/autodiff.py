"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

A :class:`Tape` records every operation whose inputs live on it. Calling
:meth:`Tape.backward` walks the records once in reverse and returns a mapping
from node id to gradient. Tensors that are not on a tape (``tape is None``)
are constants and never receive gradient.

    tape = Tape()
    w = tape.watch(np.ones((3, 2)))
    loss = ad.sum(ad.square(x @ w))
    grads = tape.backward(loss)
    grads[w.node]
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tape",
    "Tensor",
    "as_tensor",
    "no_record",
    "primitive",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "matmul",
    "rowwise_matmul",
    "silu",
    "sigmoid",
    "tanh",
    "square",
    "exp",
    "log",
    "sqrt",
    "power",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "concat",
    "take",
    "logsumexp",
    "smooth_norm_power",
    "sqdist",
]

_state = threading.local()


def _recording() -> bool:
    return getattr(_state, "recording", True)


@contextmanager
def no_record():
    """Evaluate operations without recording them on any tape."""
    prev = _recording()
    _state.recording = False
    try:
        yield
    finally:
        _state.recording = prev


class Tensor:
    """Dense float64 array, optionally attached to a tape."""

    __slots__ = ("value", "tape", "node")
    __array_priority__ = 100.0

    def __init__(self, value, tape: "Tape | None" = None, node: int | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def item(self) -> float:
        return float(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        where = "detached" if self.tape is None else f"node={self.node}"
        return f"Tensor(shape={self.shape}, {where})"

    def __len__(self) -> int:
        return len(self.value)

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of operations for one backward pass.

    Each record holds the input node ids, the output node id and the rule
    mapping the output gradient to input gradients. Records are appended in
    execution order, so inputs always precede the operations that use them.
    """

    def __init__(self):
        self._records: list[tuple[tuple[int | None, ...], int, Callable]] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._records)

    def _new_id(self) -> int:
        self._next += 1
        return self._next - 1

    def watch(self, value) -> Tensor:
        """Create a leaf tensor whose gradient will be reported."""
        return Tensor(np.array(value, dtype=np.float64), self, self._new_id())

    def _record(self, parents: Sequence[Tensor], value, rule) -> Tensor:
        ids = tuple(p.node if p.tape is self else None for p in parents)
        out = self._new_id()
        self._records.append((ids, out, rule))
        return Tensor(value, self, out)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Gradients of a scalar ``loss`` with respect to every reached node."""
        if not isinstance(loss, Tensor) or loss.size != 1:
            raise ValueError("backward needs a scalar tensor")
        if loss.tape is not self:
            raise ValueError("loss is not recorded on this tape")
        grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.value)}
        for ids, out, rule in reversed(self._records):
            g = grads.get(out)
            if g is None:
                continue
            parts = rule(g)
            for node, part in zip(ids, parts):
                if node is None or part is None:
                    continue
                if node in grads:
                    grads[node] = grads[node] + part
                else:
                    grads[node] = part
        return grads

    def gradient(self, loss: Tensor, tensors: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients for ``tensors``, zeros where the loss does not depend on them."""
        grads = self.backward(loss)
        return [
            np.asarray(grads.get(t.node, np.zeros_like(t.value)), dtype=np.float64)
            for t in tensors
        ]


def primitive(value, parents: Sequence, rule: Callable) -> Tensor:
    """Wrap ``value`` as the output of a custom differentiable operation.

    ``rule(g)`` must return one gradient (or ``None``) per entry of ``parents``.
    """
    parents = [as_tensor(p) for p in parents]
    tape = None
    if _recording():
        for p in parents:
            if p.tape is not None:
                if tape is None:
                    tape = p.tape
                elif p.tape is not tape:
                    raise ValueError("operands are recorded on different tapes")
    if tape is None:
        return Tensor(value)
    return tape._record(parents, value, rule)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray, name: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.value, b.value, "add")
    sa, sb = a.shape, b.shape
    return primitive(
        a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.value, b.value, "sub")
    sa, sb = a.shape, b.shape
    return primitive(
        a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.value, b.value, "mul")
    av, bv = a.value, b.value
    return primitive(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.value, b.value, "div")
    av, bv = a.value, b.value
    out = av / bv
    return primitive(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return primitive(-a.value, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    """Multiply by a constant scalar."""
    a = as_tensor(a)
    c = float(c)
    return primitive(a.value * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return primitive(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def rowwise_matmul(a, b) -> Tensor:
    """``a @ b`` where each output row is bitwise independent of the other rows.

    BLAS picks different kernels for short or narrow operands, so a row can
    change in the last bit depending on the batch it was computed in. Narrow
    outputs go through an unblocked einsum; otherwise both operands are
    zero-padded to whole 8-blocks so every row sees the same kernel.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    n, m = av.shape[0], bv.shape[1]
    if m <= _NARROW:
        out = np.einsum("nk,kj->nj", av, bv)
    else:
        lhs, rhs = av, bv
        if n % _BLOCK:
            lhs = np.concatenate([av, np.zeros((_BLOCK - n % _BLOCK, av.shape[1]))])
        if m % _BLOCK:
            rhs = np.concatenate([bv, np.zeros((bv.shape[0], _BLOCK - m % _BLOCK))], axis=1)
        out = (lhs @ rhs)[:n, :m]
    return primitive(out, (a, b), lambda g: (g @ bv.T, av.T @ g))


_NARROW = 16
_BLOCK = 8


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.value)
    return primitive(s, (a,), lambda g: (g * s * (1.0 - s),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def silu(a) -> Tensor:
    """x * sigmoid(x)."""
    a = as_tensor(a)
    x = a.value
    s = _sigmoid(x)
    return primitive(x * s, (a,), lambda g: (g * (s * (1.0 + x * (1.0 - s))),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.value)
    return primitive(y, (a,), lambda g: (g * (1.0 - y * y),))


def square(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    return primitive(x * x, (a,), lambda g: (2.0 * g * x,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.value)
    return primitive(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    return primitive(np.log(x), (a,), lambda g: (g / x,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    y = np.sqrt(a.value)
    return primitive(y, (a,), lambda g: (g * 0.5 / y,))


def power(a, p: float) -> Tensor:
    """Elementwise ``a ** p`` for a constant exponent."""
    a = as_tensor(a)
    x = a.value
    p = float(p)
    return primitive(x**p, (a,), lambda g: (g * p * x ** (p - 1.0),))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return primitive(a.value.sum(axis=axis, keepdims=keepdims), (a,), rule)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return primitive(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return primitive(a.value.T, (a,), lambda g: (g.T,))


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, cuts, axis=axis))

    return primitive(np.concatenate([p.value for p in parts], axis=axis), parts, rule)


def take(a, index) -> Tensor:
    """Basic or fancy indexing; gradient scatters back with accumulation."""
    a = as_tensor(a)
    shape = a.shape

    def rule(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return primitive(a.value[index], (a,), rule)


def logsumexp(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.value
    m = x.max(axis=axis, keepdims=True)
    s = np.log(np.exp(x - m).sum(axis=axis, keepdims=True)) + m
    p = np.exp(x - s)
    return primitive(np.squeeze(s, axis=axis), (a,), lambda g: (np.expand_dims(g, axis) * p,))


def smooth_norm_power(v, alpha: float, delta: float = 1e-8) -> Tensor:
    """Row-wise ``(|v|^2 + delta^2)^(alpha/2) - delta^alpha`` over the last axis.

    Equals zero at ``v = 0`` and tends to ``|v|^alpha`` as ``delta -> 0``; the
    gradient stays finite at the origin.
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if not 0 < alpha <= 2:
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    v = as_tensor(v)
    x = v.value
    r = np.einsum("...i,...i->...", x, x) + delta * delta
    out = r ** (0.5 * alpha) - delta**alpha

    def rule(g):
        coef = alpha * r ** (0.5 * alpha - 1.0)
        return ((g * coef)[..., None] * x,)

    return primitive(out, (v,), rule)


def sqdist(x, y) -> Tensor:
    """Pairwise squared Euclidean distances ``|x_i - y_j|^2``.

    Differences are formed explicitly, so ``sqdist(y, x)`` is the exact
    transpose of ``sqdist(x, y)``.
    """
    x, y = as_tensor(x), as_tensor(y)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValueError(f"sqdist: need (n, d) and (m, d), got {x.shape} and {y.shape}")
    xv, yv = x.value, y.value
    diff = xv[:, None, :] - yv[None, :, :]
    out = np.einsum("ijk,ijk->ij", diff, diff)

    def rule(g):
        gx = 2.0 * (g.sum(axis=1)[:, None] * xv - g @ yv)
        gy = 2.0 * (g.sum(axis=0)[:, None] * yv - g.T @ xv)
        return gx, gy

    return primitive(out, (x, y), rule)
