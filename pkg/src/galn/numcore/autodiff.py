"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Operations record themselves on the innermost active :class:`Tape` whenever
one of their inputs requires gradients. Outside a tape they only compute
values, which is how inference and bank-side computations run.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not fit an operation's signature."""


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        arr = np.array(values, dtype=np.float64)
        if any(s <= 0 for s in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single value, shape is {self.shape}")
        return float(self.values.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar, each maps onto one primitive
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, factor: float):
        return scale(self, factor)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# Gradient rule: maps the output cotangent to one cotangent (or None) per input.
VJP = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: VJP


@dataclass
class Tape:
    """Append-only record of differentiable operations.

    Use as a context manager; nested tapes shadow outer ones. Each thread has
    its own stack of active tapes.
    """

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _stack().pop()
        assert popped is self

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


_local = threading.local()


def _stack() -> list[Tape]:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def _emit(op: str, inputs: Sequence[Tensor], out_values: np.ndarray, vjp: VJP) -> Tensor:
    needs_grad = any(t.requires_grad for t in inputs)
    tape = active_tape()
    out = Tensor.__new__(Tensor)
    out.values = out_values
    out.grad = None
    out.name = None
    out.requires_grad = needs_grad and tape is not None
    if out.requires_grad:
        tape.record(Node(op, tuple(inputs), out, vjp))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``.grad`` of every reachable tensor.

    Gradients are summed into existing buffers, so several backward passes
    over one tape superpose. Propagation itself uses pass-local buffers.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    seen: dict[int, Tensor] = {id(loss): loss}
    done: dict[int, np.ndarray] = {}

    for node in reversed(tape.nodes):
        key = id(node.output)
        g = pending.pop(key, None)
        if g is None:
            continue
        done[key] = g
        for t, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            k = id(t)
            seen[k] = t
            pending[k] = pending[k] + gi if k in pending else np.array(gi, dtype=np.float64)

    # whatever is still pending was not produced on this tape: a leaf
    done.update(pending)
    for k, g in done.items():
        _accumulate(seen[k], g)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.reshape(g, t.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


# -- helpers ----------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None
    # only one-sided broadcasting (bias rows, scalars) is supported
    if shape != a.shape and shape != b.shape:
        raise ShapeError(f"{op}: cannot combine shapes {a.shape} and {b.shape}")
    return shape


def _check_2d(op: str, t: Tensor, what: str = "input") -> None:
    if t.values.ndim != 2:
        raise ShapeError(f"{op}: {what} must be 2-D, got shape {t.shape}")


# -- primitives -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_2d("matmul", a, "left operand")
    _check_2d("matmul", b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ ({a.shape} @ {b.shape})")
    av, bv = a.values, b.values

    def vjp(g):
        return (g @ bv.T if a.requires_grad else None,
                av.T @ g if b.requires_grad else None)

    return _emit("matmul", (a, b), av @ bv, vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _emit("add", (a, b), a.values + b.values, vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return _emit("sub", (a, b), a.values - b.values, vjp)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _emit("scale", (a,), a.values * factor, lambda g: (g * factor,))


def relu(a: Tensor) -> Tensor:
    on = a.values > 0
    return _emit("relu", (a,), np.where(on, a.values, 0.0), lambda g: (g * on,))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: needs at least one input")
    ndim = tensors[0].values.ndim
    for t in tensors:
        if t.values.ndim != ndim:
            raise ShapeError(f"concat: rank mismatch {[t.shape for t in tensors]}")
        other = [s for i, s in enumerate(t.shape) if i != axis % ndim]
        ref = [s for i, s in enumerate(tensors[0].shape) if i != axis % ndim]
        if other != ref:
            raise ShapeError(f"concat: extents off axis {axis} differ: {[t.shape for t in tensors]}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return np.split(g, splits, axis=axis)

    return _emit("concat", tensors, np.concatenate([t.values for t in tensors], axis=axis), vjp)


def mean_rows(a: Tensor) -> Tensor:
    """Column-wise mean of an m x n matrix, returned as 1 x n."""
    _check_2d("mean_rows", a)
    m = a.shape[0]
    shape = a.shape
    return _emit("mean_rows", (a,), a.values.mean(axis=0, keepdims=True),
                 lambda g: (np.broadcast_to(g / m, shape),))


def total(a: Tensor) -> Tensor:
    return _emit("sum", (a,), np.array(a.values.sum()),
                 lambda g: (np.broadcast_to(g, a.shape),))


def l1_distance(a: Tensor, b: Tensor) -> Tensor:
    """Sum of absolute differences. The subgradient at a tie is 0."""
    if a.shape != b.shape:
        raise ShapeError(f"l1_distance: shapes differ {a.shape} vs {b.shape}")
    diff = a.values - b.values
    sgn = np.sign(diff)

    def vjp(g):
        return g * sgn, -g * sgn

    return _emit("l1_distance", (a, b), np.array(np.abs(diff).sum()), vjp)


def squared_distance(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"squared_distance: shapes differ {a.shape} vs {b.shape}")
    diff = a.values - b.values

    def vjp(g):
        return 2.0 * g * diff, -2.0 * g * diff

    return _emit("squared_distance", (a, b), np.array((diff * diff).sum()), vjp)


def row_norm(a: Tensor) -> Tensor:
    """Euclidean norm of each row, shape m x 1. Gradient at a zero row is 0."""
    _check_2d("row_norm", a)
    norms = np.sqrt((a.values ** 2).sum(axis=1, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)
    unit = np.where(norms > 0, a.values / safe, 0.0)
    return _emit("row_norm", (a,), norms, lambda g: (g * unit,))


def gather_rows(a: Tensor, index) -> Tensor:
    _check_2d("gather_rows", a)
    idx = np.asarray(index, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {a.shape[0]} rows")
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _emit("gather_rows", (a,), a.values[idx], vjp)


def gather_mean(a: Tensor, index) -> Tensor:
    """Row i of the result is the mean of ``a`` rows listed in ``index[i]`` (q x k)."""
    _check_2d("gather_mean", a)
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 2:
        raise ShapeError(f"gather_mean: index must be 2-D, got shape {idx.shape}")
    if idx.min() < 0 or idx.max() >= a.shape[0]:
        raise ShapeError(f"gather_mean: index out of range for {a.shape[0]} rows")
    k = idx.shape[1]
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx.reshape(-1), np.repeat(g / k, k, axis=0))
        return (out,)

    return _emit("gather_mean", (a,), a.values[idx].mean(axis=1), vjp)


def softmax_cross_entropy(logits: Tensor, labels, mask=None) -> Tensor:
    """Mean negative log-likelihood over the (masked) rows of ``logits``."""
    _check_2d("softmax_cross_entropy", logits)
    n, c = logits.shape
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != n:
        raise ShapeError(f"softmax_cross_entropy: {y.shape[0]} labels for {n} rows")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise ShapeError(f"softmax_cross_entropy: labels must lie in [0, {c})")
    w = np.ones(n) if mask is None else np.asarray(mask, dtype=bool).astype(np.float64)
    if w.shape != (n,):
        raise ShapeError(f"softmax_cross_entropy: mask length {w.shape} for {n} rows")
    count = w.sum()
    if count == 0:
        raise ValueError("softmax_cross_entropy: mask selects no rows")

    z = logits.values - logits.values.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    nll = lse - z[np.arange(n), y]
    value = np.array((nll * w).sum() / count)

    def vjp(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), y] -= 1.0
        return (g * p * (w / count)[:, None],)

    return _emit("softmax_cross_entropy", (logits,), value, vjp)


PRIMITIVES: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "relu": relu,
    "concat": lambda *ts, axis=1: concat(ts, axis=axis),
    "mean_rows": mean_rows,
    "sum": total,
    "l1_distance": l1_distance,
    "squared_distance": squared_distance,
    "row_norm": row_norm,
    "softmax_cross_entropy": softmax_cross_entropy,
    "gather_rows": gather_rows,
    "gather_mean": gather_mean,
    "scale": scale,
}


def forward_op(op_kind: str, inputs: Sequence[Tensor], **kwargs) -> Tensor:
    """Dispatch a primitive by name, e.g. ``forward_op("relu", [x])``."""
    try:
        fn = PRIMITIVES[op_kind]
    except KeyError:
        raise ValueError(f"unknown op {op_kind!r}; expected one of {sorted(PRIMITIVES)}") from None
    return fn(*inputs, **kwargs)
