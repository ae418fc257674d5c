"""Differentiation engine for space-time potentials and the losses built on them.

Values live in float64 numpy arrays wrapped by :class:`Tensor`. Every primitive
records a closure on an implicit reverse tape, so ``loss.backward()`` yields the
exact gradient of a scalar with respect to every leaf that requires it.

Input gradients of a potential are computed in forward mode: the model pushes
an ``N x (d+1) x width`` tangent block through its layers using ordinary tape
primitives. Because those tangents are themselves tensors on the tape, the
reverse pass differentiates through them (forward-over-reverse). This is what
lets a loss contain ``u(x - t * grad u(x, t), 0)`` and still be differentiated
with respect to the parameters.

The primitive set is closed. Numpy ufuncs applied to a tensor are routed to the
matching primitive when one exists and rejected otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._kernels import distance_grads, distance_sum

__all__ = [
    "Tensor",
    "UnsupportedPrimitiveError",
    "NonFiniteError",
    "DualBatch",
    "as_tensor",
    "constant",
    "concat",
    "take",
    "sqrt",
    "square",
    "power",
    "norm",
    "tanh",
    "softplus",
    "sigmoid",
    "maximum",
    "pairwise_distance_sum",
    "eval_with_input_grad",
    "loss_param_grad",
]


class UnsupportedPrimitiveError(TypeError):
    """An operation outside the engine's primitive set was applied to a tensor."""


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or infinity; ``index`` locates the first bad entry."""

    def __init__(self, primitive: str, detail: str = "", index: tuple | None = None):
        self.primitive = primitive
        self.index = index
        msg = f"non-finite value produced by primitive '{primitive}'"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class Tensor:
    __slots__ = ("value", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, op: str = "leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.op = op
        self._parents: tuple = ()
        self._backward = None

    # -- introspection --------------------------------------------------
    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(op={self.op}, shape={self.shape}{flag})"

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    # -- reverse pass ---------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every grad-requiring leaf."""
        if self.value.size != 1:
            raise ValueError("backward() needs a scalar tensor")
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.value)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators ------------------------------------------------------
    def __add__(self, other):
        return _add(self, as_tensor(other))

    def __radd__(self, other):
        return _add(as_tensor(other), self)

    def __sub__(self, other):
        return _sub(self, as_tensor(other))

    def __rsub__(self, other):
        return _sub(as_tensor(other), self)

    def __mul__(self, other):
        return _mul(self, as_tensor(other))

    def __rmul__(self, other):
        return _mul(as_tensor(other), self)

    def __truediv__(self, other):
        return _div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return _div(as_tensor(other), self)

    def __neg__(self):
        return _neg(self)

    def __matmul__(self, other):
        return _matmul(self, as_tensor(other))

    def __rmatmul__(self, other):
        return _matmul(as_tensor(other), self)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return _sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.value.size if axis is None else self.value.shape[axis]
        return _sum(self, axis, keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _reshape(self, shape)

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method == "__call__" and not kwargs and ufunc in _UFUNC_PRIMITIVES:
            return _UFUNC_PRIMITIVES[ufunc](*[as_tensor(a) for a in inputs])
        raise UnsupportedPrimitiveError(
            f"unsupported primitive '{ufunc.__name__}' (method {method}) in composition"
        )

    def __array_function__(self, func, types, args, kwargs):
        raise UnsupportedPrimitiveError(
            f"unsupported primitive '{func.__name__}' in composition"
        )


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (np.ndarray, float, int, np.floating, np.integer, list, tuple)):
        return Tensor(x)
    raise UnsupportedPrimitiveError(f"cannot lift object of type {type(x).__name__} onto the tape")


def constant(x) -> Tensor:
    return Tensor(np.array(x, dtype=np.float64, copy=True))


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _record(value, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    value = np.asarray(value, dtype=np.float64)
    finite = np.isfinite(value)
    if not finite.all():
        index = tuple(int(i) for i in np.argwhere(~finite)[0])
        raise NonFiniteError(op, f"first bad entry at index {index}", index)
    out = Tensor(value, op=op)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic -------------------------------------------------

def _add(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.shape, b.shape
    return _record(
        a.value + b.value, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add",
    )


def _sub(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.shape, b.shape
    return _record(
        a.value - b.value, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub",
    )


def _mul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.value, b.value

    def back(g):
        ga = _unbroadcast(g * bv, av.shape) if a.requires_grad else None
        gb = _unbroadcast(g * av, bv.shape) if b.requires_grad else None
        return ga, gb

    return _record(av * bv, (a, b), back, "mul")


def _div(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.value, b.value
    with np.errstate(divide="ignore", invalid="ignore"):
        out = av / bv

    def back(g):
        ga = _unbroadcast(g / bv, av.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bv, bv.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), back, "div")


def _neg(a: Tensor) -> Tensor:
    return _record(-a.value, (a,), lambda g: (-g,), "neg")


def square(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _record(av * av, (a,), lambda g: (2.0 * av * g,), "square")


def sqrt(a) -> Tensor:
    """Square root; the derivative at 0 is taken as 0 (subgradient of a norm)."""
    a = as_tensor(a)
    if (a.value < 0).any():
        raise NonFiniteError("sqrt", "negative argument")
    out = np.sqrt(a.value)

    def back(g):
        with np.errstate(divide="ignore"):
            d = np.where(out > 0, 0.5 / np.where(out > 0, out, 1.0), 0.0)
        return (g * d,)

    return _record(out, (a,), back, "sqrt")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    av = a.value
    with np.errstate(divide="ignore", invalid="ignore"):
        out = av ** exponent
    return _record(
        out, (a,), lambda g: (g * exponent * av ** (exponent - 1.0),), f"power[{exponent}]"
    )


def maximum(a, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)`` against a constant floor."""
    a = as_tensor(a)
    mask = a.value > floor
    return _record(np.where(mask, a.value, floor), (a,), lambda g: (g * mask,), "maximum")


def norm(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    return sqrt(_sum(square(a), axis, keepdims))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(a, beta: float = 1.0) -> Tensor:
    """``log(1 + exp(beta * a)) / beta`` without overflow for large ``beta * a``."""
    a = as_tensor(a)
    z = beta * a.value
    out = np.maximum(a.value, 0.0) + np.log1p(np.exp(-np.abs(z))) / beta
    s = _stable_sigmoid(z)
    return _record(out, (a,), lambda g: (g * s,), f"softplus[{beta}]")


def sigmoid(a, beta: float = 1.0) -> Tensor:
    """``1 / (1 + exp(-beta * a))``; the derivative of :func:`softplus`."""
    a = as_tensor(a)
    s = _stable_sigmoid(beta * a.value)
    return _record(s, (a,), lambda g: (g * beta * s * (1.0 - s),), f"sigmoid[{beta}]")


# -- structural ops ---------------------------------------------------------

def _matmul(a: Tensor, b: Tensor) -> Tensor:
    if b.ndim != 2 or a.ndim < 2:
        raise UnsupportedPrimitiveError("matmul supports (..., n, k) @ (k, m) only")
    av, bv = a.value, b.value

    def back(g):
        ga = g @ bv.T if a.requires_grad else None
        gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1]) if b.requires_grad else None
        return ga, gb

    return _record(av @ bv, (a, b), back, "matmul")


def _sum(a: Tensor, axis, keepdims: bool) -> Tensor:
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(a.value.sum(axis=axis, keepdims=keepdims), (a,), back, "sum")


def _reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.shape
    return _record(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def _getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _record(a.value[idx], (a,), back, "getitem")


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    ax = axis % parts[0].ndim
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _record(np.concatenate([p.value for p in parts], axis=ax), parts, back, "concat")


def take(a, indices: np.ndarray) -> Tensor:
    """Gather rows ``a[indices]`` along axis 0 (indices are data, not differentiated)."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, indices, g)
        return (full,)

    return _record(a.value[indices], (a,), back, "take")


def pairwise_distance_sum(x, y=None) -> Tensor:
    """``sum_ij ||x_i - y_j||_2``; pass ``y=None`` for the self-distance sum of ``x``.

    The gradient of a coincident pair is taken as 0. Rows are reduced in a
    fixed order so the result is bitwise reproducible.
    """
    x = as_tensor(x)
    same = y is None
    y = x if same else as_tensor(y)
    xv, yv = x.value, y.value
    if xv.ndim != 2 or yv.ndim != 2 or xv.shape[1] != yv.shape[1]:
        raise ValueError(f"pairwise distance needs (N,d),(M,d) arrays, got {xv.shape}, {yv.shape}")
    xt = np.ascontiguousarray(xv.T)
    yt = xt if same else np.ascontiguousarray(yv.T)
    total = distance_sum(xt, yt)
    parents = (x,) if same else (x, y)

    def back(g):
        want_y = not same and y.requires_grad
        if not x.requires_grad and not want_y:
            return (None,) * len(parents)
        gx, gy = distance_grads(xt, yt, want_y)
        gx, gy = gx.T, gy.T
        if same:
            # each unordered pair contributes through both slots
            return (2.0 * g * gx,)
        return (g * gx if x.requires_grad else None), (g * gy if want_y else None)

    return _record(total, parents, back, "pairwise_distance_sum")


_UFUNC_PRIMITIVES = {
    np.add: lambda a, b: _add(a, b),
    np.subtract: lambda a, b: _sub(a, b),
    np.multiply: lambda a, b: _mul(a, b),
    np.true_divide: lambda a, b: _div(a, b),
    np.negative: lambda a: _neg(a),
    np.matmul: lambda a, b: _matmul(a, b),
    np.square: square,
    np.sqrt: sqrt,
    np.tanh: tanh,
}


# -- model-level entry points -----------------------------------------------

@dataclass
class DualBatch:
    """Potential values with their full input gradients.

    ``input_tangents[i]`` holds ``(du/dx_1, ..., du/dx_d, du/dt)`` at point ``i``.
    """

    values: np.ndarray
    input_tangents: np.ndarray

    def __post_init__(self):
        if self.input_tangents.ndim != 2 or self.input_tangents.shape[0] != self.values.shape[0]:
            raise ValueError("tangent rows must match value count")

    @property
    def spatial(self) -> np.ndarray:
        return self.input_tangents[:, :-1]

    @property
    def temporal(self) -> np.ndarray:
        return self.input_tangents[:, -1]


def eval_with_input_grad(model, points) -> DualBatch:
    """Evaluate ``u`` and its gradient in ``(x, t)`` at each row of ``points`` (N x (d+1))."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != model.dim + 1:
        raise ValueError(
            f"model expects points with {model.dim + 1} columns (x and t), got shape {points.shape}"
        )
    if not np.isfinite(points).all():
        raise ValueError("points must be finite")
    u, gx, gt = model.evaluate(points[:, :-1], points[:, -1], grad=True)
    tangents = np.concatenate([gx.value, gt.value[:, None]], axis=1)
    return DualBatch(u.value.copy(), tangents)


def loss_param_grad(model, loss_builder: Callable) -> tuple[float, np.ndarray]:
    """Value and parameter gradient of ``loss_builder(bound_model)``.

    ``loss_builder`` receives the model bound to fresh grad-requiring leaves and
    must return a scalar :class:`Tensor`. The gradient is flattened in the same
    order as ``model.flat_params()``.
    """
    leaves = [Tensor(p, requires_grad=True) for p in model.params]
    loss = loss_builder(model.bind(leaves))
    if not isinstance(loss, Tensor):
        raise UnsupportedPrimitiveError("loss builder must return a Tensor built from engine primitives")
    if loss.value.size != 1:
        raise ValueError("loss must be a scalar")
    if loss.requires_grad:
        loss.backward()
    grad = np.concatenate(
        [(leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)).ravel() for leaf in leaves]
    ) if leaves else np.zeros(0)
    return float(loss.value), grad
