"""Reverse-mode autodiff on float64 numpy arrays.

A Graph is a flat tape: ops append nodes in execution order, so insertion
order is already a topological order and backward is a single reversed
sweep. Graphs are short-lived, one per training step. Outside an active
graph every op just computes its numpy value, which doubles as a free
inference mode: anything sampled or scored there is a constant to the
differentiated loss by construction.
"""

from __future__ import annotations

import builtins
from typing import Callable, Sequence

import numpy as np

_ACTIVE: "Graph | None" = None


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "trainable", "_graph", "_node")

    def __init__(self, data, trainable: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.trainable = trainable
        self._graph: Graph | None = None
        self._node: int | None = None

    @classmethod
    def param(cls, data) -> "Tensor":
        return cls(data, trainable=True)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def sum(self, axis=None) -> "Tensor":
        return sum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return mean(self, axis)

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        tag = " param" if self.trainable else ""
        return f"Tensor(shape={self.data.shape}{tag})"


class _Node:
    __slots__ = ("parents", "backward")

    def __init__(self, parents: tuple[int, ...], backward: Callable):
        self.parents = parents
        self.backward = backward


class Graph:
    """Per-step tape. Use as a context manager; nesting is not allowed."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Graph":
        global _ACTIVE
        if _ACTIVE is not None:
            raise RuntimeError("a Graph is already active; graphs do not nest")
        _ACTIVE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE
        _ACTIVE = None
        return False

    def _enroll(self, t: Tensor) -> int | None:
        """Node id of t in this graph; leaves join lazily, constants get None."""
        if t._graph is self:
            return t._node
        if t.trainable:
            node_id = len(self.nodes)
            self.nodes.append(_Node((), lambda g: ()))
            t._graph = self
            t._node = node_id
            return node_id
        return None

    def _record(self, out: Tensor, parents: Sequence[int | None],
                backward: Callable) -> None:
        node_id = len(self.nodes)
        self.nodes.append(_Node(tuple(parents), backward))
        out._graph = self
        out._node = node_id

    def backward(self, loss: Tensor) -> dict[int, Tensor]:
        """Accumulated gradients of a one-element loss, keyed by node id."""
        if loss._graph is not self or loss._node is None:
            raise ValueError("loss tensor was not computed on this graph")
        if loss.data.size != 1:
            raise ValueError(f"loss must have exactly one element, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {loss._node: np.ones_like(loss.data)}
        for node_id in range(loss._node, -1, -1):
            if node_id not in grads:
                continue
            node = self.nodes[node_id]
            if not node.parents:
                continue
            parent_grads = node.backward(grads[node_id])
            for pid, g in builtins.zip(node.parents, parent_grads):
                if pid is None or g is None:
                    continue
                if pid in grads:
                    grads[pid] = grads[pid] + g
                else:
                    grads[pid] = g
        return {nid: Tensor(g) for nid, g in grads.items()}

    def grad(self, grads: dict[int, Tensor], t: Tensor) -> np.ndarray:
        """Gradient array for t, exact zeros if the loss never touched it."""
        if t._graph is self and t._node is not None and t._node in grads:
            return grads[t._node].data
        return np.zeros_like(t.data)


def _const(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _binary_shapes(op: str, a: np.ndarray, b: np.ndarray) -> None:
    """Permit equal shapes or trailing-aligned broadcast over leading axes."""
    small, big = (a, b) if a.ndim <= b.ndim else (b, a)
    if big.shape[big.ndim - small.ndim:] != small.shape:
        raise ShapeError(f"op '{op}': shapes {a.shape} and {b.shape} only broadcast "
                         "over a leading batch dimension")


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum leading axes so an upstream gradient matches a broadcast operand."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


def _apply(op: str, inputs: Sequence[Tensor], value: np.ndarray,
           backward: Callable) -> Tensor:
    out = Tensor(value)
    graph = _ACTIVE
    if graph is not None:
        parents = [graph._enroll(t) for t in inputs]
        if any(p is not None for p in parents):
            graph._record(out, parents, backward)
    return out


def add(a, b) -> Tensor:
    a, b = _const(a), _const(b)
    _binary_shapes("add", a.data, b.data)
    sa, sb = a.data.shape, b.data.shape
    return _apply("add", (a, b), a.data + b.data,
                  lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _const(a), _const(b)
    _binary_shapes("sub", a.data, b.data)
    sa, sb = a.data.shape, b.data.shape
    return _apply("sub", (a, b), a.data - b.data,
                  lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _const(a), _const(b)
    _binary_shapes("mul", a.data, b.data)
    da, db = a.data, b.data
    return _apply("mul", (a, b), da * db,
                  lambda g: (_reduce_to(g * db, da.shape), _reduce_to(g * da, db.shape)))


def neg(a) -> Tensor:
    a = _const(a)
    return _apply("neg", (a,), -a.data, lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = _const(a), _const(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"op 'matmul': incompatible shapes {a.data.shape} and {b.data.shape}")
    da, db = a.data, b.data
    return _apply("matmul", (a, b), da @ db,
                  lambda g: (g @ db.T, da.T @ g))


def exp(a) -> Tensor:
    a = _const(a)
    value = np.exp(a.data)
    return _apply("exp", (a,), value, lambda g: (g * value,))


def log(a) -> Tensor:
    a = _const(a)
    if np.any(a.data <= 0.0):
        raise ValueError("op 'log': input must be strictly positive")
    da = a.data
    return _apply("log", (a,), np.log(da), lambda g: (g / da,))


def square(a) -> Tensor:
    a = _const(a)
    da = a.data
    return _apply("square", (a,), da * da, lambda g: (2.0 * da * g,))


def tanh(a) -> Tensor:
    a = _const(a)
    value = np.tanh(a.data)
    return _apply("tanh", (a,), value, lambda g: (g * (1.0 - value * value),))


def relu(a) -> Tensor:
    a = _const(a)
    da = a.data
    return _apply("relu", (a,), np.maximum(da, 0.0), lambda g: (g * (da > 0.0),))


def softplus(a) -> Tensor:
    a = _const(a)
    da = a.data
    value = np.logaddexp(0.0, da)
    return _apply("softplus", (a,), value,
                  lambda g: (g / (1.0 + np.exp(-da)),))


def sum(a, axis=None) -> Tensor:
    a = _const(a)
    da = a.data

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, da.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), da.shape).copy(),)

    return _apply("sum", (a,), da.sum(axis=axis), backward)


def mean(a, axis=None) -> Tensor:
    a = _const(a)
    da = a.data
    count = da.size if axis is None else da.shape[axis]

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / count, da.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / count, da.shape).copy(),)

    return _apply("mean", (a,), da.mean(axis=axis), backward)


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the subgradient goes to the first operand."""
    a, b = _const(a), _const(b)
    _binary_shapes("minimum", a.data, b.data)
    da, db = a.data, b.data
    take_a = da <= db
    return _apply("minimum", (a, b), np.minimum(da, db),
                  lambda g: (_reduce_to(g * take_a, da.shape),
                             _reduce_to(g * ~take_a, db.shape)))


def clamp_above(a, cap: float) -> Tensor:
    """min(x, cap) with zero gradient strictly above the cap."""
    a = _const(a)
    da = a.data
    passes = da <= cap
    return _apply("clamp_above", (a,), np.minimum(da, cap),
                  lambda g: (g * passes,))


def gather_rows(a, index) -> Tensor:
    """Select rows of a 2-d tensor by an integer index array."""
    a = _const(a)
    index = np.asarray(index)
    if a.data.ndim != 2 or index.ndim != 1 or not np.issubdtype(index.dtype, np.integer):
        raise ShapeError(f"op 'gather_rows': need a 2-d tensor and 1-d integer index, "
                         f"got {a.data.shape} and {index.dtype}")
    da = a.data

    def backward(g):
        out = np.zeros_like(da)
        np.add.at(out, index, g)
        return (out,)

    return _apply("gather_rows", (a,), da[index], backward)


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor],
                      step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f builds a scalar loss from the given parameter tensors and must be
    deterministic across calls (freeze any sampling outside of f). Relative
    error per coordinate is |a - b| / max(|a|, |b|, 1e-8); callers assert
    the returned maximum against their tolerance.
    """
    with Graph() as g:
        grads = g.backward(f())
        analytic = [g.grad(grads, p) for p in params]

    worst = 0.0
    for p, ana in builtins.zip(params, analytic):
        for idx in np.ndindex(p.data.shape):
            keep = p.data[idx]
            p.data[idx] = keep + step
            hi = float(f().data)
            p.data[idx] = keep - step
            lo = float(f().data)
            p.data[idx] = keep
            num = (hi - lo) / (2.0 * step)
            a = ana[idx]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
