"""Reverse-mode automatic differentiation over dense real arrays.

A :class:`Tape` records primitive operations eagerly: every node's value is
computed when it is recorded, together with a vector-Jacobian product that
maps the node's adjoint back onto its parents. :meth:`Tape.backward` walks
the record in reverse and returns the gradient of a scalar root with respect
to every :class:`Param` that was placed on the tape.

Values are always ``float64`` numpy arrays of rank 0, 1 or 2. Elementwise
binary operations follow numpy broadcasting and their adjoints are summed
back down to the parent shape.

    >>> tape = Tape()
    >>> x = tape.param(Param(np.array([3.0, 4.0]), "x"))
    >>> grads = tape.backward(squared_norm(x))
    >>> grads["x"]
    array([6., 8.])
"""

from __future__ import annotations

import warnings
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg

__all__ = [
    "PIVOT_RATIO_LIMIT",
    "ConditioningError",
    "Node",
    "Param",
    "ShapeError",
    "Tape",
    "add",
    "clip",
    "concat",
    "cos",
    "exp",
    "log",
    "matmul",
    "matvec",
    "mul",
    "neg",
    "power",
    "reciprocal",
    "sigmoid",
    "sin",
    "solve_linear",
    "squared_norm",
    "stack",
    "sub",
    "sum",
    "take",
    "tanh",
    "transpose",
]

PIVOT_RATIO_LIMIT = 1e12


class ShapeError(ValueError):
    """Operands of a primitive have incompatible shapes."""


class ConditioningError(np.linalg.LinAlgError):
    """A linear solve was rejected because the matrix is (nearly) singular.

    ``condition`` holds the ratio of the largest to the smallest LU pivot
    magnitude, which is a cheap lower-bound proxy for the condition number.
    """

    def __init__(self, condition: float, message: str | None = None):
        self.condition = float(condition)
        if message is None:
            message = (
                f"matrix rejected by conditioning guard: pivot ratio "
                f"{self.condition:.3e} exceeds {PIVOT_RATIO_LIMIT:.0e}"
            )
        super().__init__(message)


class Param:
    """A named trainable array. The tape reads ``value`` and never mutates it."""

    def __init__(self, value, name: str):
        self.value = np.array(value, dtype=np.float64)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


class Node:
    __slots__ = ("tape", "index", "op", "value", "parents", "vjp", "param", "_forward")

    __array_priority__ = 100.0  # make ``ndarray * node`` defer to Node.__rmul__

    def __init__(self, tape, index, op, value, parents, vjp, param=None, forward=None):
        self.tape = tape
        self.index = index
        self.op = op
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.param = param
        self._forward = forward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def T(self) -> "Node":
        return transpose(self)

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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __repr__(self) -> str:
        return f"Node(#{self.index} {self.op}, shape={self.shape})"


class Tape:
    """Ordered record of primitive operations.

    Nodes are appended in evaluation order, so parents always precede their
    children. A tape is not thread-safe; use one tape per thread.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaves: dict[int, Node] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, op, value, parents, vjp, param=None, forward=None) -> Node:
        node = Node(self, len(self.nodes), op, value, tuple(parents), vjp, param, forward)
        self.nodes.append(node)
        return node

    def param(self, p: Param) -> Node:
        """Return the leaf node for ``p``, creating it on first use."""
        node = self._leaves.get(id(p))
        if node is None:
            node = self._append("param", p.value, (), None, param=p)
            self._leaves[id(p)] = node
        return node

    def const(self, value) -> Node:
        return self._append("const", np.array(value, dtype=np.float64), (), None)

    @property
    def params(self) -> list[Param]:
        return [n.param for n in self._leaves.values()]

    def record(self, op_kind: str, parents: Sequence, **kwargs) -> Node:
        """Evaluate primitive ``op_kind`` on ``parents`` and append the result."""
        try:
            forward = _PRIMITIVES[op_kind]
        except KeyError:
            raise ValueError(f"unknown primitive {op_kind!r}") from None
        nodes = [self._lift(p) for p in parents]
        value, vjp = forward(*(n.value for n in nodes), **kwargs)
        return self._append(op_kind, value, nodes, vjp, forward=(forward, kwargs))

    def _lift(self, x) -> Node:
        if isinstance(x, Node):
            if x.tape is not self:
                raise ValueError("node belongs to a different tape")
            return x
        if isinstance(x, Param):
            return self.param(x)
        return self.const(x)

    def replay(self) -> None:
        """Recompute every node from the current values of its leaves."""
        for node in self.nodes:
            if node.op == "param":
                node.value = node.param.value
            elif node._forward is not None:
                forward, kwargs = node._forward
                node.value, node.vjp = forward(*(p.value for p in node.parents), **kwargs)

    def backward(self, root: Node, params: Iterable[Param] = ()) -> dict[str, np.ndarray]:
        """Gradient of scalar ``root`` w.r.t. every Param on the tape.

        Params on the tape that ``root`` does not depend on, and any extra
        ``params`` passed in, map to zero arrays.
        """
        if not isinstance(root, Node) or root.tape is not self:
            raise ValueError("root must be a node recorded on this tape")
        if root.value.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")

        adjoints: list[np.ndarray | None] = [None] * (root.index + 1)
        adjoints[root.index] = np.ones_like(root.value)
        for i in range(root.index, -1, -1):
            adj = adjoints[i]
            node = self.nodes[i]
            if adj is None or node.vjp is None:
                continue
            for parent, g in zip(node.parents, node.vjp(adj)):
                if g is None:
                    continue
                j = parent.index
                adjoints[j] = g if adjoints[j] is None else adjoints[j] + g

        grads = {p.name: np.zeros_like(p.value) for p in params}
        for leaf in self._leaves.values():
            adj = adjoints[leaf.index] if leaf.index <= root.index else None
            grads[leaf.param.name] = (
                np.zeros_like(leaf.value) if adj is None else np.array(adj, dtype=np.float64)
            )
        return grads


# ---------------------------------------------------------------------------
# primitive forward rules: (*values, **kw) -> (value, vjp)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_check(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


def _add(a, b):
    _broadcast_check("add", a, b)
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


def _sub(a, b):
    _broadcast_check("sub", a, b)
    return a - b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


def _mul(a, b):
    _broadcast_check("mul", a, b)
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


def _neg(a):
    return -a, lambda g: (-g,)


def _matmul(a, b):
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a @ b

    def vjp(g):
        if a.ndim == 2 and b.ndim == 2:
            return g @ b.T, a.T @ g
        if a.ndim == 2:
            return np.outer(g, b), a.T @ g
        if b.ndim == 2:
            return b @ g, np.outer(a, g)
        return g * b, g * a

    return out, vjp


def _matvec(a, x):
    if a.ndim != 2 or x.ndim != 1:
        raise ShapeError(f"matvec: expected matrix and vector, got {a.shape} and {x.shape}")
    return _matmul(a, x)


def _tanh(a):
    y = np.tanh(a)
    return y, lambda g: (g * (1.0 - y * y),)


def _exp(a):
    y = np.exp(a)
    return y, lambda g: (g * y,)


def _log(a):
    return np.log(a), lambda g: (g / a,)


def _sin(a):
    return np.sin(a), lambda g: (g * np.cos(a),)


def _cos(a):
    return np.cos(a), lambda g: (-g * np.sin(a),)


def _sigmoid(a):
    y = 0.5 * (1.0 + np.tanh(0.5 * a))  # overflow-free logistic
    return y, lambda g: (g * y * (1.0 - y),)


def _reciprocal(a):
    y = 1.0 / a
    return y, lambda g: (-g * y * y,)


def _power(a, *, exponent: float):
    y = a**exponent
    return y, lambda g: (g * exponent * a ** (exponent - 1.0),)


def _clip(a, *, lo: float, hi: float):
    inside = (a >= lo) & (a <= hi)
    return np.clip(a, lo, hi), lambda g: (np.where(inside, g, 0.0),)


def _sum(a):
    return np.array(a.sum()), lambda g: (np.broadcast_to(g, a.shape).copy(),)


def _squared_norm(a):
    return np.array(np.sum(a * a)), lambda g: (2.0 * g * a,)


def _transpose(a):
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")
    return a.T.copy(), lambda g: (g.T,)


def _take(a, *, indices, axis: int):
    idx = np.asarray(indices)
    out = np.take(a, idx, axis=axis)

    def vjp(g):
        ga = np.zeros_like(a)
        moved = np.moveaxis(ga, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0) if idx.ndim else g)
        return (ga,)

    return out, vjp


def _stack(*arrays, axis: int):
    shapes = {x.shape for x in arrays}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack(arrays, axis=axis)
    return out, lambda g: tuple(np.moveaxis(g, axis, 0))


def _concat(*arrays, axis: int):
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([x.shape[axis] for x in arrays])[:-1]
    return out, lambda g: tuple(np.split(g, bounds, axis=axis))


def lu_factor_guarded(a: np.ndarray):
    """LU factorization with partial pivoting plus the pivot-ratio guard."""
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"solve_linear needs a square matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ConditioningError(np.inf, "matrix has non-finite entries")
    with warnings.catch_warnings():
        # exact singularity is reported below as a ConditioningError
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    pivots = np.abs(np.diag(lu))
    smallest = pivots.min()
    ratio = np.inf if smallest == 0.0 else pivots.max() / smallest
    if ratio > PIVOT_RATIO_LIMIT:
        raise ConditioningError(ratio)
    return lu, piv


def _solve_linear(a, b):
    if b.ndim not in (1, 2) or b.shape[0] != a.shape[0]:
        raise ShapeError(f"solve_linear: rhs shape {b.shape} does not match {a.shape}")
    factors = lu_factor_guarded(a)
    x = scipy.linalg.lu_solve(factors, b, check_finite=False)

    def vjp(g):
        gb = scipy.linalg.lu_solve(factors, g, trans=1, check_finite=False)
        ga = -(np.outer(gb, x) if x.ndim == 1 else gb @ x.T)
        return ga, gb

    return x, vjp


_PRIMITIVES: dict[str, Callable] = {
    "add": _add,
    "sub": _sub,
    "mul": _mul,
    "neg": _neg,
    "matmul": _matmul,
    "matvec": _matvec,
    "tanh": _tanh,
    "exp": _exp,
    "log": _log,
    "sin": _sin,
    "cos": _cos,
    "sigmoid": _sigmoid,
    "reciprocal": _reciprocal,
    "power": _power,
    "clip": _clip,
    "sum": _sum,
    "squared_norm": _squared_norm,
    "transpose": _transpose,
    "take": _take,
    "stack": _stack,
    "concat": _concat,
    "solve_linear": _solve_linear,
}


# ---------------------------------------------------------------------------
# public functional API


def _tape_of(args) -> Tape:
    for a in args:
        if isinstance(a, Node):
            return a.tape
    raise TypeError("at least one operand must be a Node")


def _op(kind, *args, **kwargs) -> Node:
    return _tape_of(args).record(kind, args, **kwargs)


def add(a, b) -> Node:
    return _op("add", a, b)


def sub(a, b) -> Node:
    return _op("sub", a, b)


def mul(a, b) -> Node:
    return _op("mul", a, b)


def neg(a) -> Node:
    return _op("neg", a)


def matmul(a, b) -> Node:
    return _op("matmul", a, b)


def matvec(a, x) -> Node:
    return _op("matvec", a, x)


def tanh(a) -> Node:
    return _op("tanh", a)


def exp(a) -> Node:
    return _op("exp", a)


def log(a) -> Node:
    return _op("log", a)


def sin(a) -> Node:
    return _op("sin", a)


def cos(a) -> Node:
    return _op("cos", a)


def sigmoid(a) -> Node:
    return _op("sigmoid", a)


def reciprocal(a) -> Node:
    return _op("reciprocal", a)


def power(a, exponent: float) -> Node:
    return _op("power", a, exponent=float(exponent))


def clip(a, lo: float, hi: float) -> Node:
    """Elementwise clamp to ``[lo, hi]``; clamped entries pass no gradient."""
    return _op("clip", a, lo=float(lo), hi=float(hi))


def sum(a) -> Node:  # noqa: A001 - mirrors the primitive's name
    return _op("sum", a)


def squared_norm(a) -> Node:
    return _op("squared_norm", a)


def transpose(a) -> Node:
    return _op("transpose", a)


def take(a, indices, axis: int = 0) -> Node:
    return _op("take", a, indices=indices, axis=axis)


def stack(items: Sequence, axis: int = 0) -> Node:
    return _op("stack", *items, axis=axis)


def concat(items: Sequence, axis: int = 0) -> Node:
    return _op("concat", *items, axis=axis)


def solve_linear(a, b) -> Node:
    """Solve ``a @ x = b`` for ``x``; ``b`` may be a vector or a matrix of columns.

    Raises :class:`ConditioningError` when the LU pivot ratio exceeds
    :data:`PIVOT_RATIO_LIMIT`.
    """
    return _op("solve_linear", a, b)
