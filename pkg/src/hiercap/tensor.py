"""Dense float64 tensors with a dynamic reverse-mode gradient tape.

Every public operation validates shapes, checks the result for NaN/Inf
(fail fast, no silent propagation) and, when a tape is active and an
input requires gradients, records a vector-Jacobian closure. Gradients
therefore flow only through computations performed inside a ``Tape``
context; sampling and rollout code simply runs outside one.

Supported elementwise broadcasts are deliberately narrow: exact shape,
scalar against anything, a row vector ``[n]``/``[1, n]`` against
``[m, n]``, and a column ``[m, 1]`` against ``[m, n]``.
"""

from __future__ import annotations

import math
import threading

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def _ensure_finite(arr: np.ndarray, what: str) -> None:
    # Cheap probe: a NaN/Inf anywhere poisons the sum. Huge-but-finite
    # values can overflow the probe alone, so confirm before raising.
    if arr.size == 0:
        return
    if math.isfinite(float(np.sum(arr))):
        return
    if bool(np.all(np.isfinite(arr))):
        return
    raise NumericError(f"non-finite values produced by {what}")


class Tensor:
    """Row-major float64 array, optionally accumulating a gradient."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, copy=True)
        _ensure_finite(arr, "tensor construction")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={tuple(self.data.shape)}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Tape:
    """Ordered record of primitives; ``backward`` replays it in reverse.

    A tape is single use: running backward twice without re-recording is
    an error. Tapes nest (inner tape records while active) and each tape
    plus its tensors belong to one worker.
    """

    def __init__(self):
        self._nodes = []
        self._consumed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def record(self, out: Tensor, pairs) -> None:
        self._nodes.append((out, pairs))

    def backward(self, loss: Tensor) -> None:
        if self._consumed:
            raise ContractError("tape already consumed by backward()")
        if loss.data.size != 1:
            raise ContractError("backward() requires a scalar loss")
        if not self._nodes:
            raise ContractError("backward() on an empty tape")
        self._consumed = True

        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for out, pairs in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for tensor, vjp in pairs:
                contrib = vjp(g)
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib
                    leaves[key] = tensor
        for key, g in grads.items():
            tensor = leaves.get(key)
            if tensor is None or not tensor.requires_grad:
                continue
            if tensor.grad is None:
                tensor.grad = g.reshape(tensor.data.shape)
            else:
                tensor.grad = tensor.grad + g.reshape(tensor.data.shape)
        self._nodes = []


def backward(loss: Tensor, tape: Tape) -> None:
    tape.backward(loss)


def _make(data: np.ndarray, what: str, pairs) -> Tensor:
    _ensure_finite(data, what)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    tape = active_tape()
    if tape is not None:
        live = [(t, fn) for t, fn in pairs if t.requires_grad]
        if live:
            out.requires_grad = True
            tape.record(out, live)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _check_ew(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape == b.shape:
        return
    for x, y in ((a, b), (b, a)):
        if y.ndim == 0:
            return
        if x.ndim == 2:
            if y.shape in ((x.shape[1],), (1, x.shape[1]), (x.shape[0], 1)):
                return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_ew(a.data, b.data, "add")
    out = a.data + b.data
    return _make(out, "add", (
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_ew(a.data, b.data, "sub")
    out = a.data - b.data
    return _make(out, "sub", (
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(-g, b.data.shape)),
    ))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_ew(a.data, b.data, "mul")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data * b.data
    return _make(out, "mul", (
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, "neg", ((a, lambda g: -g),))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, "scale", ((a, lambda g: g * c),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: inner dims disagree {a.data.shape} x {b.data.shape}")
    out = a.data @ b.data
    return _make(out, "matmul", (
        (a, lambda g: g @ b.data.T),
        (b, lambda g: a.data.T @ g),
    ))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, "sigmoid", ((a, lambda g: g * out * (1.0 - out)),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, "tanh", ((a, lambda g: g * (1.0 - out * out)),))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, "exp", ((a, lambda g: g * out),))


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(0.0, a.data)
    x = a.data

    def vjp(g):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        return g * s

    return _make(out, "softplus", ((a, vjp),))


def _softmax_raw(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a: Tensor) -> Tensor:
    if a.data.ndim not in (1, 2) or a.data.shape[-1] < 1:
        raise DimensionError("softmax expects a non-empty vector or row matrix")
    y = _softmax_raw(a.data)

    def vjp(g):
        return y * (g - (g * y).sum(axis=-1, keepdims=True))

    return _make(y, "softmax", ((a, vjp),))


def log_softmax(a: Tensor) -> Tensor:
    if a.data.ndim not in (1, 2) or a.data.shape[-1] < 1:
        raise DimensionError("log_softmax expects a non-empty vector or row matrix")
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def vjp(g):
        return g - sm * g.sum(axis=-1, keepdims=True)

    return _make(out, "log_softmax", ((a, vjp),))


def masked_softmax(a: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over positions where mask is True; masked entries are exactly 0."""
    x = a.data
    if x.ndim not in (1, 2):
        raise DimensionError("masked_softmax expects a vector or row matrix")
    m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not m.any(axis=-1).all():
        raise ContractError("masked_softmax: a row has no valid entries")
    neg = np.where(m, x, -np.inf)
    shifted = neg - neg.max(axis=-1, keepdims=True)
    e = np.where(m, np.exp(np.where(m, shifted, 0.0)), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return y * (g - (g * y).sum(axis=-1, keepdims=True))

    return _make(y, "masked_softmax", ((a, vjp),))


def concat(a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    if a.data.ndim != b.data.ndim:
        raise DimensionError("concat operands must share rank")
    if axis < 0 or axis >= a.data.ndim:
        raise DimensionError(f"concat axis {axis} out of range for rank {a.data.ndim}")
    for d in range(a.data.ndim):
        if d != axis and a.data.shape[d] != b.data.shape[d]:
            raise DimensionError(
                f"concat: shapes {a.data.shape} and {b.data.shape} differ off-axis")
    out = np.concatenate([a.data, b.data], axis=axis)
    n = a.data.shape[axis]

    def take(g, start, stop):
        index = [slice(None)] * g.ndim
        index[axis] = slice(start, stop)
        return g[tuple(index)]

    return _make(out, "concat", (
        (a, lambda g: take(g, 0, n)),
        (b, lambda g: take(g, n, None)),
    ))


def rowsum(a: Tensor) -> Tensor:
    """Sum along the last axis, keeping it as an explicit length-1 column."""
    if a.data.ndim != 2:
        raise DimensionError("rowsum expects a matrix")
    out = a.data.sum(axis=1, keepdims=True)
    return _make(out, "rowsum", (
        (a, lambda g: np.broadcast_to(g, a.data.shape).copy()),))


def total(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())
    return _make(out, "total", (
        (a, lambda g: np.broadcast_to(g, a.data.shape).copy()),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.asarray(a.data.sum() / n)
    return _make(out, "mean", (
        (a, lambda g: np.broadcast_to(g / n, a.data.shape).copy()),))


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return _make(out, "reshape", (
        (a, lambda g: g.reshape(a.data.shape)),))


def pick(a: Tensor, idx) -> Tensor:
    """Select one entry per row: out[i, 0] = a[i, idx[i]]."""
    if a.data.ndim != 2:
        raise DimensionError("pick expects a matrix")
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1 or idx.shape[0] != a.data.shape[0]:
        raise DimensionError("pick: index length must equal the row count")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[1]):
        raise DimensionError("pick: index out of range")
    rows = np.arange(a.data.shape[0])
    out = a.data[rows, idx][:, None]

    def vjp(g):
        z = np.zeros_like(a.data)
        np.add.at(z, (rows, idx), g[:, 0])
        return z

    return _make(out, "pick", ((a, vjp),))


def gather_rows(table: Tensor, ids) -> Tensor:
    """Row lookup: out[i] = table[ids[i]]; gradient scatters back to rows."""
    if table.data.ndim != 2:
        raise DimensionError("gather_rows expects a matrix table")
    ids = np.asarray(ids, dtype=np.intp)
    if ids.ndim != 1:
        raise DimensionError("gather_rows expects a flat id list")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise DimensionError("gather_rows: id out of range")
    out = table.data[ids]

    def vjp(g):
        z = np.zeros_like(table.data)
        np.add.at(z, ids, g)
        return z

    return _make(out, "gather_rows", ((table, vjp),))


def repeat_rows(a: Tensor, r: int) -> Tensor:
    """Repeat each row r times consecutively: [m, n] -> [m*r, n]."""
    if a.data.ndim != 2:
        raise DimensionError("repeat_rows expects a matrix")
    m, n = a.data.shape
    out = np.repeat(a.data, r, axis=0)
    return _make(out, "repeat_rows", (
        (a, lambda g: g.reshape(m, r, n).sum(axis=1)),))


def group_sum(a: Tensor, r: int) -> Tensor:
    """Sum every r consecutive rows: [m*r, n] -> [m, n]."""
    if a.data.ndim != 2:
        raise DimensionError("group_sum expects a matrix")
    rows, n = a.data.shape
    if rows % r:
        raise DimensionError(f"group_sum: {rows} rows not divisible by {r}")
    out = a.data.reshape(rows // r, r, n).sum(axis=1)
    return _make(out, "group_sum", (
        (a, lambda g: np.repeat(g, r, axis=0)),))
