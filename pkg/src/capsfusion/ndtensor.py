"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Record` is an append-only list of nodes. Every primitive applied to
a tensor that belongs to a record appends one node holding the forward value
and a closure mapping the output gradient to input gradients. Tensors that do
not belong to any record are plain values: primitives on them compute the
forward result and record nothing, which is how evaluation runs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

DTYPE = np.float64


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class GradientError(RuntimeError):
    """Raised when backward() is asked for something it cannot do."""


@dataclass
class Node:
    kind: str
    inputs: tuple[Optional[int], ...]
    value: np.ndarray
    vjp: Optional[Callable[[np.ndarray], tuple]] = None


class Record:
    """Append-only computation record (the tape)."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def leaf(self, data, kind: str = "leaf") -> "Tensor":
        """Register ``data`` as a differentiable input of this record."""
        arr = np.array(data, dtype=DTYPE)
        node_id = self._append(Node(kind, (), arr))
        return Tensor(arr, self, node_id)


class Tensor:
    __slots__ = ("data", "record", "node_id")
    __array_priority__ = 100

    def __init__(self, data, record: Optional[Record] = None, node_id: Optional[int] = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.record = record
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", node={self.node_id}" if self.node_id is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record_of(*tensors: Tensor) -> Optional[Record]:
    rec = None
    for t in tensors:
        if t.record is not None:
            if rec is None:
                rec = t.record
            elif t.record is not rec:
                raise GradientError("operands belong to different computation records")
    return rec


def _emit(kind: str, value: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    rec = _record_of(*inputs)
    if rec is None:
        return Tensor(value)
    ids = tuple(t.node_id if t.record is rec else None for t in inputs)
    node_id = rec._append(Node(kind, ids, value, vjp))
    return Tensor(value, rec, node_id)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching semantics on leading axes.

    Both operands must be at least 2-D; the inner extents must agree.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from exc
    av, bv = a.data, b.data

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(bv, -1, -2))
        gb = np.matmul(np.swapaxes(av, -1, -2), g)
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _emit("matmul", out, (a, b), vjp)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    sa, sb = a.shape, b.shape
    return _emit("add", out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    sa, sb = a.shape, b.shape
    return _emit("sub", out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.data, b.data
    out = av * bv
    return _emit(
        "mul", out, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def hadamard(a, b) -> Tensor:
    """Elementwise product of two tensors of identical shape."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: shapes differ {a.shape} vs {b.shape}")
    return mul(a, b)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.data, b.data
    out = av / bv

    def vjp(g):
        return _unbroadcast(g / bv, av.shape), _unbroadcast(-g * av / (bv * bv), bv.shape)

    return _emit("div", out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _emit("relu", np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid_np(np.atleast_1d(a.data)).reshape(a.shape)
    return _emit("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _emit("exp", y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _emit("log", np.log(x), (a,), lambda g: (g / x,))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where the input is inside [lo, hi]."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _emit("clip", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def softmax_row(a) -> Tensor:
    """Softmax along the last axis, computed after subtracting the row max."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", y, (a,), vjp)


def norm(a, axis: int = -1, keepdims: bool = True) -> Tensor:
    """Euclidean norm along ``axis``. The gradient at a zero vector is taken as 0."""
    a = as_tensor(a)
    x = a.data
    n = np.sqrt((x * x).sum(axis=axis, keepdims=True))

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, g * x / safe, 0.0),)

    out = n if keepdims else np.squeeze(n, axis=axis)
    return _emit("norm", out, (a,), vjp)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", np.asarray(out), (a,), vjp)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from exc
    return _emit("reshape", out, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2) if a.ndim >= 2 else (0,)
    inv = np.argsort(axes)
    return _emit("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, index, g)
        return (out,)

    return _emit("getitem", np.array(a.data[index]), (a,), vjp)


def take_rows(table, ids) -> Tensor:
    """Gather rows of a 2-D ``table`` by integer ``ids`` of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"take_rows: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"take_rows: id out of range [0, {table.shape[0]})")
    shape = table.shape

    def vjp(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (out,)

    return _emit("take_rows", table.data[ids], (table,), vjp)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit("concat", out, ts, vjp)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)
    count = len(ts)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(count))

    return _emit("stack", out, ts, vjp)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def backward(record: Record, loss: Tensor | int) -> dict[int, np.ndarray]:
    """Gradients of a scalar node with respect to every node it depends on.

    Returns a map ``node_id -> ndarray``. Leaf nodes that the loss does not
    reach are present with zero gradients. The record itself is not modified,
    so calling this twice gives identical results.
    """
    loss_id = loss.node_id if isinstance(loss, Tensor) else loss
    if isinstance(loss, Tensor) and loss.record is not record:
        raise GradientError("loss tensor is not part of this record")
    if loss_id is None or not 0 <= loss_id < len(record.nodes):
        raise GradientError(f"node {loss_id!r} is not in the record")
    root = record.nodes[loss_id]
    if root.value.size != 1:
        raise GradientError(f"loss must be scalar, got shape {root.value.shape}")

    grads: dict[int, np.ndarray] = {loss_id: np.ones_like(root.value)}
    for node_id in range(loss_id, -1, -1):
        g = grads.get(node_id)
        node = record.nodes[node_id]
        if g is None or node.vjp is None:
            continue
        for src, gi in zip(node.inputs, node.vjp(g)):
            if src is None or gi is None:
                continue
            if src in grads:
                grads[src] = grads[src] + gi
            else:
                grads[src] = gi
    for node_id, node in enumerate(record.nodes[: loss_id + 1]):
        if node.vjp is None and node_id not in grads:
            grads[node_id] = np.zeros_like(node.value)
    return grads


# ---------------------------------------------------------------------------
# finite-difference check
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    per_param: list[float] = field(default_factory=list)
    entries: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); 0 where both are exactly zero."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    out = np.zeros_like(diff)
    np.divide(diff, scale, out=out, where=diff != 0)
    return out


def grad_check(
    f: Callable[[list[Tensor]], Tensor],
    params: Sequence[np.ndarray],
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare backward() gradients of ``f`` with central finite differences.

    ``f`` receives one tensor per array in ``params`` and must return a scalar
    tensor. It is called once on recorded leaves and then repeatedly on plain
    tensors for the perturbed evaluations.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    rec = Record()
    leaves = [rec.leaf(p) for p in params]
    out = f(leaves)
    if out.data.size != 1:
        raise GradientError(f"grad_check needs a scalar function, got shape {out.shape}")
    if out.record is None:
        analytic = [np.zeros_like(leaf.data) for leaf in leaves]
    else:
        grads = backward(rec, out)
        analytic = [grads[leaf.node_id] for leaf in leaves]

    base = [np.array(p, dtype=DTYPE) for p in params]
    per_param = []
    entries = 0
    for k, arr in enumerate(base):
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            plus = f([Tensor(a) for a in base]).item()
            flat[idx] = orig - epsilon
            minus = f([Tensor(a) for a in base]).item()
            flat[idx] = orig
            numeric.reshape(-1)[idx] = (plus - minus) / (2 * epsilon)
        entries += flat.size
        err = relative_error(analytic[k], numeric, floor)
        per_param.append(float(err.max()) if err.size else 0.0)
    worst = max(per_param, default=0.0)
    logger.debug("grad_check: %d entries, max relative error %.3e", entries, worst)
    return GradCheckReport(worst, tolerance, per_param, entries)
