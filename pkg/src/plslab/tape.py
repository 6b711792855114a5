"""Reverse-mode differentiation for the fixed training-loss graph.

Deliberately not a general autodiff system: it provides exactly the array
operations the training objective composes, all on float64 numpy arrays.
A fresh graph is built per batch, differentiated once with :func:`backward`,
and discarded.
"""

from __future__ import annotations

import numpy as np

PROB_FLOOR = 1e-12


class Tensor:
    """Graph node: a value plus vector-Jacobian callbacks into its parents."""

    __slots__ = ("value", "grad", "parents")

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)


def constant(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def softmax_rows(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction, shared by tape and plain forward."""
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    out = x.value @ w.value + b.value
    return Tensor(out, [
        (x, lambda g: g @ w.value.T),
        (w, lambda g: x.value.T @ g),
        (b, lambda g: g.sum(axis=0)),
    ])


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.value)
    return Tensor(out, [(x, lambda g: g * (1.0 - out * out))])


def softmax(z: Tensor) -> Tensor:
    s = softmax_rows(z.value)

    def vjp(g):
        return s * (g - (g * s).sum(axis=-1, keepdims=True))

    return Tensor(s, [(z, vjp)])


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    width = a.value.shape[1]
    out = np.concatenate([a.value, b.value], axis=1)
    return Tensor(out, [
        (a, lambda g: g[:, :width]),
        (b, lambda g: g[:, width:]),
    ])


def add(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(a.value + b.value, [
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(g, b.value.shape)),
    ])


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(a.value - b.value, [
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(-g, b.value.shape)),
    ])


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(a.value * b.value, [
        (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
    ])


def div(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(a.value / b.value, [
        (a, lambda g: _unbroadcast(g / b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape)),
    ])


def clip_min(a: Tensor, lo: float) -> Tensor:
    out = np.maximum(a.value, lo)
    return Tensor(out, [(a, lambda g: g * (a.value > lo))])


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.value), [(a, lambda g: g / a.value)])


def floor_log(a: Tensor, floor: float = PROB_FLOOR) -> Tensor:
    """log with the argument floored at `floor`: flat (zero-gradient) below it."""
    return log(clip_min(a, floor))


def row_sum(a: Tensor) -> Tensor:
    out = a.value.sum(axis=1, keepdims=True)
    return Tensor(out, [(a, lambda g: np.broadcast_to(g, a.value.shape))])


def col_sum(a: Tensor) -> Tensor:
    out = a.value.sum(axis=0, keepdims=True)
    return Tensor(out, [(a, lambda g: np.broadcast_to(g, a.value.shape))])


def total(a: Tensor) -> Tensor:
    return Tensor(a.value.sum(), [(a, lambda g: g * np.ones_like(a.value))])


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor(a.value * c, [(a, lambda g: g * c)])


def backward(out: Tensor) -> None:
    """Accumulate d(out)/d(node) into `.grad` of every node reachable from `out`.

    Assumes a freshly built graph; grads of all reachable nodes are reset first.
    """
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    for node in order:
        node.grad = None
    out.grad = np.ones_like(out.value)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node.parents:
            contribution = vjp(g)
            parent.grad = contribution if parent.grad is None else parent.grad + contribution
