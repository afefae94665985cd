"""Dense float64 tensors with define-by-run reverse-mode differentiation.

A :class:`Tape` records every primitive applied to tensors that descend from
one of its leaves. Recording order is creation order, so the node list is
already topologically sorted and :meth:`Tape.backward` is a single reverse
sweep. Tensors with no tape are constants: operations on them are evaluated
eagerly and nothing is recorded.

    >>> tape = Tape()
    >>> w = tape.leaf([2.0])
    >>> grads = tape.backward(mse(w, zeros(1)))
    >>> grads[w]
    array([4.])
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

__all__ = [
    "Tape",
    "Tensor",
    "as_tensor",
    "zeros",
    "custom_op",
    "matmul",
    "tanh",
    "elu",
    "relu_pos",
    "abs",
    "square",
    "mse",
    "stack",
    "concat",
    "backward",
]

Vjp = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class _Node:
    __slots__ = ("parents", "vjp")

    def __init__(self, parents: tuple, vjp: Vjp | None):
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Ordered record of primitive operations.

    One tape serves one forward pass; build a fresh tape per training
    iteration. Not thread-safe, and not meant to be shared between threads.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaves: list[Tensor] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, data, name: str | None = None) -> "Tensor":
        t = Tensor(data, _tape=self, _index=len(self.nodes))
        t.name = name
        self.nodes.append(_Node((), None))
        self._leaves.append(t)
        return t

    @property
    def leaves(self) -> list["Tensor"]:
        return list(self._leaves)

    def _record(self, data: np.ndarray, parents: tuple, vjp: Vjp) -> "Tensor":
        idx = tuple(None if p is None else p.index for p in parents)
        t = Tensor(data, _tape=self, _index=len(self.nodes))
        self.nodes.append(_Node(idx, vjp))
        return t

    def backward(self, loss: "Tensor") -> dict["Tensor", np.ndarray]:
        """Gradient of scalar ``loss`` with respect to every leaf of this tape.

        Leaves that ``loss`` does not depend on get a zero gradient.
        """
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            shape = getattr(loss, "shape", None)
            raise ContractError(f"backward needs a scalar loss, got shape {shape}")
        if loss.tape is not self:
            raise ContractError("loss was not recorded on this tape")

        grads: list = [None] * len(self.nodes)
        grads[loss.index] = np.ones_like(loss.data)
        nodes = self.nodes
        for i in range(loss.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = nodes[i]
            if node.vjp is None:
                continue
            cts = node.vjp(g)
            for p, ct in zip(node.parents, cts):
                if p is None or ct is None:
                    continue
                if grads[p] is None:
                    grads[p] = ct
                else:
                    grads[p] = grads[p] + ct

        out = {}
        for leaf in self._leaves:
            g = grads[leaf.index]
            out[leaf] = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=np.float64)
        return out


def backward(loss: "Tensor") -> dict["Tensor", np.ndarray]:
    if not isinstance(loss, Tensor) or loss.tape is None:
        raise ContractError("backward needs a loss recorded on a tape")
    return loss.tape.backward(loss)


class Tensor:
    """A float64 array, optionally attached to a :class:`Tape`."""

    __slots__ = ("data", "tape", "index", "name")
    __array_priority__ = 100.0

    def __init__(self, data, _tape: Tape | None = None, _index: int | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = _tape
        self.index = _index
        self.name = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = "const" if self.tape is None else f"node {self.index}"
        return f"Tensor({self.data!r}, {tag})"

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # arithmetic
    def __add__(self, other):
        return _add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, -as_tensor(other))

    def __rsub__(self, other):
        return _add(as_tensor(other), -self)

    def __mul__(self, other):
        return _mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        if other.tape is None:
            return _mul(self, Tensor(1.0 / other.data))
        return _div(self, other)

    def __rtruediv__(self, other):
        return _div(as_tensor(other), self)

    def __neg__(self):
        return custom_op(-self.data, (self,), lambda g: (-g,))

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, key):
        return _getitem(self, key)

    def sum(self, axis=None):
        return _sum(self, axis)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return _sum(self, axis) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        return custom_op(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    @property
    def T(self):
        return custom_op(self.data.T, (self,), lambda g: (g.T,))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape))


def _common_tape(inputs: Iterable[Tensor]) -> Tape | None:
    tape = None
    for t in inputs:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif t.tape is not tape:
            raise ContractError("operands belong to different tapes")
    return tape


def custom_op(data, inputs: Sequence[Tensor], vjp: Vjp) -> Tensor:
    """Record a primitive with output ``data`` and vector-Jacobian product ``vjp``.

    ``vjp(g)`` must return one cotangent (or ``None``) per entry of ``inputs``.
    Constant inputs are skipped during the backward sweep.
    """
    tape = _common_tape(inputs)
    if tape is None:
        return Tensor(data)
    parents = tuple(t if t.tape is not None else None for t in inputs)
    return tape._record(np.asarray(data, dtype=np.float64), parents, vjp)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _add(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.data.shape, b.data.shape
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"cannot add shapes {sa} and {sb}") from None
    return custom_op(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def _mul(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.data.shape, b.data.shape
    ad, bd = a.data, b.data
    try:
        out = ad * bd
    except ValueError:
        raise ShapeError(f"cannot multiply shapes {sa} and {sb}") from None
    return custom_op(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g * bd, sa) if a.tape is not None else None,
            _unbroadcast(g * ad, sb) if b.tape is not None else None,
        ),
    )


def _div(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.data.shape, b.data.shape
    out = a.data / b.data
    bd = b.data
    return custom_op(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, sa), _unbroadcast(-g * out / bd, sb)),
    )


def _sum(a: Tensor, axis) -> Tensor:
    shape = a.data.shape
    out = a.data.sum(axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return custom_op(out, (a,), vjp)


def _getitem(a: Tensor, key) -> Tensor:
    shape = a.data.shape
    out = a.data[key]

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return (full,)

    return custom_op(np.array(out, dtype=np.float64), (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 1-D/2-D operands with numpy's vector conventions."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ShapeError(f"matmul supports 1-D/2-D operands, got {ad.shape} and {bd.shape}")
    k_a = ad.shape[-1]
    k_b = bd.shape[0]
    if k_a != k_b:
        raise ShapeError(f"matmul inner dimensions differ: {ad.shape} @ {bd.shape}")
    out = ad @ bd

    def vjp(g):
        ga = gb = None
        if a.tape is not None:
            if bd.ndim == 1:
                ga = np.multiply.outer(g, bd) if ad.ndim == 2 else g * bd
            else:
                ga = g @ bd.T
        if b.tape is not None:
            if ad.ndim == 1:
                gb = np.outer(ad, g) if bd.ndim == 2 else g * ad
            elif bd.ndim == 1:
                gb = ad.T @ g
            else:
                gb = ad.T @ g
        return ga, gb

    return custom_op(out, (a, b), vjp)


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return custom_op(y, (a,), lambda g: (g * (1.0 - y * y),))


def elu(a: Tensor) -> Tensor:
    """ELU with alpha = 1."""
    a = as_tensor(a)
    x = a.data
    neg = x < 0.0
    y = np.where(neg, np.expm1(np.minimum(x, 0.0)), x)
    slope = np.where(neg, y + 1.0, 1.0)
    return custom_op(y, (a,), lambda g: (g * slope,))


def relu_pos(a: Tensor) -> Tensor:
    """Positive part ``max(z, 0)``; subgradient 0 at z = 0."""
    a = as_tensor(a)
    mask = a.data > 0.0
    return custom_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    """Absolute value; subgradient 0 at z = 0."""
    a = as_tensor(a)
    sign = np.sign(a.data)
    return custom_op(np.abs(a.data), (a,), lambda g: (g * sign,))


def square(a: Tensor) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return custom_op(x * x, (a,), lambda g: (2.0 * g * x,))


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences over all entries."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    if pred.data.size == 0:
        raise ContractError("mse of empty tensors")
    diff = pred.data - target.data
    n = diff.size
    scale = 2.0 / n
    return custom_op(
        np.array(np.mean(diff * diff)),
        (pred, target),
        lambda g: (g * scale * diff, -g * scale * diff),
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return custom_op(out, tuple(tensors), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return custom_op(out, tuple(tensors), vjp)
