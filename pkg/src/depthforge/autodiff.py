"""Minimal reverse-mode differentiation over float64 numpy arrays.

A graph is built eagerly while a loss is evaluated and thrown away after
``backward``; nothing is taped or reused across steps. Shapes are validated
on the forward pass so backward never has to. The op set is deliberately
small: exactly what the losses and the toy model need.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DomainError


class Node:
    """One value in a computation graph.

    ``value`` is the forward result, ``op`` names the producing operation,
    ``parents`` are the input nodes, and ``grad`` holds d(root)/d(value)
    after ``backward`` has run on a scalar root downstream of this node.
    """

    __slots__ = ("value", "op", "parents", "grad", "_push")

    def __init__(self, value, op: str = "leaf", parents: tuple = (), push=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.op = op
        self.parents = parents
        self.grad = None
        # _push maps the incoming gradient to one contribution per parent.
        self._push: Callable[[np.ndarray], tuple] | None = push

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"

    # Operator sugar; constants are wrapped as fresh leaves.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __abs__(self):
        return absolute(self)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Node, b: Node, op: str) -> None:
    try:
        np.broadcast_shapes(a.value.shape, b.value.shape)
    except ValueError:
        raise DomainError(
            f"{op}: shapes {a.value.shape} and {b.value.shape} do not broadcast"
        ) from None


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, "add")
    def push(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)
    return Node(a.value + b.value, "add", (a, b), push)


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, "sub")
    def push(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)
    return Node(a.value - b.value, "sub", (a, b), push)


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, "mul")
    def push(g):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )
    return Node(a.value * b.value, "mul", (a, b), push)


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, "div")
    if np.any(b.value == 0.0):
        raise DomainError("div: zero denominator")
    def push(g):
        return (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        )
    return Node(a.value / b.value, "div", (a, b), push)


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise DomainError("matmul: both operands must be 2-D")
    if a.value.shape[1] != b.value.shape[0]:
        raise DomainError(
            f"matmul: inner dimensions differ, {a.value.shape} vs {b.value.shape}"
        )
    def push(g):
        return g @ b.value.T, a.value.T @ g
    return Node(a.value @ b.value, "matmul", (a, b), push)


def relu(a) -> Node:
    a = as_node(a)
    keep = a.value > 0.0
    def push(g):
        return (g * keep,)
    return Node(np.where(keep, a.value, 0.0), "relu", (a,), push)


def sigmoid(a) -> Node:
    a = as_node(a)
    x = a.value
    # Branch on sign for overflow-free evaluation.
    y = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    def push(g):
        return (g * y * (1.0 - y),)
    return Node(y, "sigmoid", (a,), push)


def absolute(a) -> Node:
    a = as_node(a)
    # np.sign gives 0 at 0, which is the subgradient this package commits to.
    sign = np.sign(a.value)
    def push(g):
        return (g * sign,)
    return Node(np.abs(a.value), "abs", (a,), push)


def reduce_sum(a) -> Node:
    a = as_node(a)
    def push(g):
        return (np.broadcast_to(g, a.value.shape).copy(),)
    return Node(a.value.sum(), "sum", (a,), push)


def reduce_mean(a) -> Node:
    a = as_node(a)
    n = a.value.size
    if n == 0:
        raise DomainError("mean of an empty tensor")
    def push(g):
        return (np.broadcast_to(g / n, a.value.shape).copy(),)
    return Node(a.value.sum() / n, "mean", (a,), push)


def median(a) -> Node:
    """Statistical median; even counts average the two middle order statistics.

    Backward routes the gradient to the chosen element (odd count) or splits
    it half and half between the two middle elements (even count).
    """
    a = as_node(a)
    flat = a.value.ravel()
    n = flat.size
    if n == 0:
        raise DomainError("median of an empty tensor")
    order = np.argsort(flat, kind="stable")
    if n % 2:
        picks = ((order[(n - 1) // 2], 1.0),)
        value = flat[picks[0][0]]
    else:
        lo, hi = order[n // 2 - 1], order[n // 2]
        picks = ((lo, 0.5), (hi, 0.5))
        value = 0.5 * (flat[lo] + flat[hi])
    def push(g):
        buf = np.zeros(n)
        for index, weight in picks:
            buf[index] += weight * g
        return (buf.reshape(a.value.shape),)
    return Node(value, "median", (a,), push)


def minimum(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, "minimum")
    a_wins = a.value <= b.value  # ties go to the first argument
    def push(g):
        return (
            _unbroadcast(g * a_wins, a.value.shape),
            _unbroadcast(g * ~a_wins, b.value.shape),
        )
    return Node(np.where(a_wins, a.value, b.value), "minimum", (a, b), push)


def maximum(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, "maximum")
    a_wins = a.value >= b.value  # ties go to the first argument
    def push(g):
        return (
            _unbroadcast(g * a_wins, a.value.shape),
            _unbroadcast(g * ~a_wins, b.value.shape),
        )
    return Node(np.where(a_wins, a.value, b.value), "maximum", (a, b), push)


def concat(nodes: Sequence, axis: int = 0) -> Node:
    nodes = tuple(as_node(x) for x in nodes)
    if not nodes:
        raise DomainError("concat of zero tensors")
    try:
        value = np.concatenate([x.value for x in nodes], axis=axis)
    except ValueError as exc:
        raise DomainError(f"concat: {exc}") from None
    sizes = [x.value.shape[axis] for x in nodes]
    def push(g):
        splits = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        return tuple(splits)
    return Node(value, "concat", nodes, push)


def take(a, indices) -> Node:
    """Gather from the flattened tensor; the slicing primitive of this op set.

    The gradient scatter-adds back, so repeated indices accumulate.
    """
    a = as_node(a)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.value.size):
        raise DomainError("take: index out of range")
    def push(g):
        buf = np.zeros(a.value.size)
        np.add.at(buf, idx.ravel(), np.asarray(g).ravel())
        return (buf.reshape(a.value.shape),)
    return Node(a.value.ravel()[idx], "take", (a,), push)


def reshape(a, shape) -> Node:
    a = as_node(a)
    try:
        value = a.value.reshape(shape)
    except ValueError as exc:
        raise DomainError(f"reshape: {exc}") from None
    def push(g):
        return (g.reshape(a.value.shape),)
    return Node(value, "reshape", (a,), push)


def _row_norms(x: np.ndarray, op: str) -> np.ndarray:
    if x.ndim != 2:
        raise DomainError(f"{op}: expected a 2-D tensor, got shape {x.shape}")
    norms = np.sqrt((x * x).sum(axis=1))
    if np.any(norms == 0.0):
        raise DomainError(f"{op}: zero-norm row")
    return norms


def l2_normalize_rows(a) -> Node:
    a = as_node(a)
    norms = _row_norms(a.value, "l2_normalize_rows")
    y = a.value / norms[:, None]
    def push(g):
        along = (g * y).sum(axis=1, keepdims=True)
        return ((g - along * y) / norms[:, None],)
    return Node(y, "l2_normalize_rows", (a,), push)


def cosine_rows(a, b) -> Node:
    """Per-row cosine similarity of two equal-shape 2-D tensors."""
    a, b = as_node(a), as_node(b)
    na = _row_norms(a.value, "cosine_rows")
    nb = _row_norms(b.value, "cosine_rows")
    if a.value.shape != b.value.shape:
        raise DomainError(
            f"cosine_rows: shapes differ, {a.value.shape} vs {b.value.shape}"
        )
    dots = (a.value * b.value).sum(axis=1)
    cos = dots / (na * nb)
    def push(g):
        ga = g[:, None] * (b.value / (na * nb)[:, None] - (cos / (na * na))[:, None] * a.value)
        gb = g[:, None] * (a.value / (na * nb)[:, None] - (cos / (nb * nb))[:, None] * b.value)
        return ga, gb
    return Node(cos, "cosine_rows", (a, b), push)


def _topo_order(root: Node) -> list[Node]:
    """Reverse topological order (root first), iterative so depth never bites."""
    seen: set[int] = set()
    post: list[Node] = []
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            post.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    post.reverse()
    return post


def backward(root: Node) -> None:
    """Populate ``grad`` on every node reachable from a scalar root."""
    if root.value.shape != ():
        raise DomainError(f"backward expects a scalar root, got shape {root.value.shape}")
    order = _topo_order(root)
    for node in order:
        node.grad = np.zeros_like(node.value)
    root.grad = np.ones_like(root.value)
    for node in order:
        if node._push is None:
            continue
        contributions = node._push(node.grad)
        for parent, contribution in zip(node.parents, contributions):
            parent.grad += contribution


def gradcheck(f, x, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central finite differences.

    ``f`` maps a Node to a scalar Node. Per coordinate the error is
    |analytic - numeric| / max(1, |numeric|); the max over coordinates is
    returned. Sample ``x`` away from nondifferentiable points (median ties,
    abs zeros, margin boundaries).
    """
    x = np.array(x, dtype=np.float64)
    leaf = Node(x)
    out = f(leaf)
    if out.value.shape != ():
        raise DomainError("gradcheck: f must return a scalar node")
    backward(out)
    analytic = leaf.grad.ravel()
    worst = 0.0
    for i in range(x.size):
        bumped = x.copy().ravel()
        bumped[i] += eps
        hi = float(f(Node(bumped.reshape(x.shape))).value)
        bumped[i] -= 2 * eps
        lo = float(f(Node(bumped.reshape(x.shape))).value)
        numeric = (hi - lo) / (2.0 * eps)
        err = abs(analytic[i] - numeric) / max(1.0, abs(numeric))
        if err > worst:
            worst = err
    return worst
