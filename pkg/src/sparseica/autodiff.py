"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps a float64 ndarray together with the tape edges that produced
it. Gradients are accumulated by a single reverse sweep in topological order.
The op set is exactly what the training objectives need: elementwise
arithmetic, matmul with broadcasting, a few smooth nonlinearities, axis
reductions and index plumbing. Jacobian-valued expressions are built by
propagating input tangents *through these ops*, so a scalar that depends on
the Jacobian can be reverse-differentiated with respect to parameters.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Node of the tape: a value plus vjp edges to its parents."""

    __slots__ = ("value", "_parents", "_vjps")

    # defer ndarray <op> Tensor to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(
        self,
        value,
        parents: tuple["Tensor", ...] = (),
        vjps: tuple[Callable[[Array], Array], ...] = (),
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self._parents = parents
        self._vjps = vjps

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape})"

    # operator sugar; scalars and ndarrays are treated as constants
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """Wrap an array as a leaf with no tape edges."""
    return Tensor(x)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(
        a.value + b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g, a.shape),
            lambda g: _unbroadcast(g, b.shape),
        ),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(
        a.value - b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g, a.shape),
            lambda g: _unbroadcast(-g, b.shape),
        ),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(
        a.value * b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.value, a.shape),
            lambda g: _unbroadcast(g * a.value, b.shape),
        ),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    inv = 1.0 / b.value
    out = a.value * inv
    return Tensor(
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g * inv, a.shape),
            lambda g: _unbroadcast(-g * out * inv, b.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.value, (a,), (lambda g: -g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.value @ b.value
    return Tensor(
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g @ b.value.swapaxes(-1, -2), a.shape),
            lambda g: _unbroadcast(a.value.swapaxes(-1, -2) @ g, b.shape),
        ),
    )


# ---------------------------------------------------------------------------
# nonlinearities


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    return Tensor(y, (a,), (lambda g: g * (1.0 - y * y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.value)
    return Tensor(y, (a,), (lambda g: g * y,))


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.value), (a,), (lambda g: g / a.value,))


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.value)
    return Tensor(y, (a,), (lambda g: g * (0.5 / y),))


def absval(a: Tensor) -> Tensor:
    # subgradient 0 at 0
    s = np.sign(a.value)
    return Tensor(np.abs(a.value), (a,), (lambda g: g * s,))


def softplus(a: Tensor) -> Tensor:
    y = np.logaddexp(0.0, a.value)
    sig = 1.0 / (1.0 + np.exp(-a.value))
    return Tensor(y, (a,), (lambda g: g * sig,))


# ---------------------------------------------------------------------------
# reductions and shape plumbing


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g: Array) -> Array:
        if axis is None:
            return np.broadcast_to(g, a.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.shape).copy()

    return Tensor(out, (a,), (vjp,))


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.value.size if axis is None else a.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return Tensor(
        a.value.reshape(shape), (a,), (lambda g: g.reshape(a.shape),)
    )


def expand_dims(a: Tensor, axis: int) -> Tensor:
    return Tensor(
        np.expand_dims(a.value, axis), (a,), (lambda g: g.reshape(a.shape),)
    )


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    values = [p.value for p in parts]
    out = np.concatenate(values, axis=axis)
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i: int):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(offsets[i], offsets[i + 1])
        sl = tuple(sl)
        return lambda g: g[sl]

    return Tensor(out, tuple(parts), tuple(make_vjp(i) for i in range(len(parts))))


def take(a: Tensor, indices, axis: int = -1) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    out = np.take(a.value, idx, axis=axis)
    distinct = len(np.unique(idx)) == len(idx)

    def vjp(g: Array) -> Array:
        full = np.zeros(a.shape, dtype=np.float64)
        moved = np.moveaxis(full, axis, 0)
        if distinct:
            moved[idx] = np.moveaxis(g, axis, 0)
        else:
            np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return full

    return Tensor(out, (a,), (vjp,))


# ---------------------------------------------------------------------------
# reverse sweep


def _topo_order(root: Tensor) -> list[Tensor]:
    """Children-before-parents order, iterative to avoid recursion limits."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def grad(output: Tensor, wrt: Sequence[Tensor]) -> list[Array]:
    """Gradients of a scalar `output` with respect to the leaves in `wrt`.

    Leaves that do not influence the output get zero gradients of their own
    shape.
    """
    if output.value.size != 1:
        raise ValueError("grad requires a scalar output")
    grads: dict[int, Array] = {id(output): np.ones_like(output.value)}
    for node in _topo_order(output):
        g = grads.get(id(node))
        if g is None:
            continue
        if node._parents:
            del grads[id(node)]  # free intermediates; leaves keep theirs
        for parent, vjp in zip(node._parents, node._vjps):
            pg = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return [grads.get(id(w), np.zeros_like(w.value)) for w in wrt]
