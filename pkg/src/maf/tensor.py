"""Dense float64 matrices with reverse-mode automatic differentiation.

The computation graph is recorded on the tensors themselves: every
operation stores its kind, references to its input tensors, and a closure
holding whatever values its backward rule needs. Calling ``backward`` on a
scalar result walks that graph once in reverse topological order and
accumulates gradients into every ``requires_grad`` leaf.

Conventions used throughout the package:

* storage is row-major ``float64``; everything is a 2-D matrix and scalars
  are represented as ``1 x 1``;
* elementwise ops broadcast by trailing-dimension rules: both operands
  need the same number of axes, and an axis of size 1 stretches to match;
* a tensor that has been recorded in a graph is never mutated in place
  (optimizers update leaf ``.data`` only between graph builds);
* gradients accumulate additively across ``backward`` calls until
  ``zero_grad`` clears them.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "add",
    "sub",
    "mul",
    "matmul",
    "transpose",
    "scale",
    "sigmoid",
    "relu",
    "softmax_rows",
    "concat_last",
    "slice_cols",
    "gather_rows",
    "sum_all",
    "layer_norm_rows",
    "cross_entropy_rows",
    "backward",
    "zeros",
    "ones",
    "zeros_like",
    "ones_like",
    "glorot_uniform",
]


class Tensor:
    """A float64 matrix plus the bookkeeping needed for backprop.

    ``op`` names the operation that produced the tensor (``"leaf"`` for
    inputs and parameters), ``parents`` are the input tensors, and the
    private backward closure maps the output gradient to per-parent
    gradient contributions. Only tensors with ``requires_grad`` keep their
    parent links, so constant subgraphs cost nothing at backward time.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Iterable[tuple["Tensor", np.ndarray | None]]] | None = None

    # ---- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def __repr__(self) -> str:
        head = np.array2string(self.data, precision=4, threshold=8)
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})\n{head}"

    # ---- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _coerce(other))


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, op: str, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out._backward = backward_fn
    else:
        # constant subgraph: keep the value, drop the graph
        out.requires_grad = False
        out.parents = ()
        out._backward = None
    return out


def _require_matrix(t: Tensor, op: str) -> None:
    if t.data.ndim != 2:
        raise ShapeError(f"{op} expects 2-D tensors, got shape {t.data.shape}")


# ---- broadcasting helpers ----------------------------------------------


def _broadcast_shape(sa: tuple[int, ...], sb: tuple[int, ...], op: str) -> tuple[int, ...]:
    if len(sa) != len(sb):
        raise ShapeError(f"{op}: operands need the same rank, got {sa} and {sb}")
    out = []
    for x, y in zip(sa, sb):
        if x == y:
            out.append(x)
        elif x == 1:
            out.append(y)
        elif y == 1:
            out.append(x)
        else:
            raise ShapeError(f"{op}: shapes {sa} and {sb} do not broadcast")
    return tuple(out)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum an output gradient back down to a broadcast operand's shape."""
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


# ---- elementwise arithmetic ---------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _broadcast_shape(a.shape, b.shape, "add")
    out = a.data + b.data

    def back(g):
        return (
            (a, _unbroadcast(g, a.shape) if a.requires_grad else None),
            (b, _unbroadcast(g, b.shape) if b.requires_grad else None),
        )

    return _node(out, "add", (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    out = a.data - b.data

    def back(g):
        return (
            (a, _unbroadcast(g, a.shape) if a.requires_grad else None),
            (b, _unbroadcast(-g, b.shape) if b.requires_grad else None),
        )

    return _node(out, "sub", (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _broadcast_shape(a.shape, b.shape, "mul")
    out = a.data * b.data
    a_data, b_data = a.data, b.data

    def back(g):
        return (
            (a, _unbroadcast(g * b_data, a.shape) if a.requires_grad else None),
            (b, _unbroadcast(g * a_data, b.shape) if b.requires_grad else None),
        )

    return _node(out, "mul", (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python scalar constant."""
    a = _coerce(a)
    c = float(c)
    out = a.data * c

    def back(g):
        return ((a, g * c),)

    return _node(out, "scale", (a,), back)


# ---- linear algebra ------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _require_matrix(a, "matmul")
    _require_matrix(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} @ {b.shape}")
    out = a.data @ b.data
    a_data, b_data = a.data, b.data

    def back(g):
        return (
            (a, g @ b_data.T if a.requires_grad else None),
            (b, a_data.T @ g if b.requires_grad else None),
        )

    return _node(out, "matmul", (a, b), back)


def transpose(a: Tensor) -> Tensor:
    a = _coerce(a)
    _require_matrix(a, "transpose")
    out = a.data.T.copy()

    def back(g):
        return ((a, g.T),)

    return _node(out, "transpose", (a,), back)


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two matrices along the last (column) axis."""
    a, b = _coerce(a), _coerce(b)
    _require_matrix(a, "concat_last")
    _require_matrix(b, "concat_last")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_last: row counts disagree, {a.shape} vs {b.shape}")
    out = np.concatenate([a.data, b.data], axis=1)
    split = a.shape[1]

    def back(g):
        return (
            (a, g[:, :split] if a.requires_grad else None),
            (b, g[:, split:] if b.requires_grad else None),
        )

    return _node(out, "concat_last", (a, b), back)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    a = _coerce(a)
    _require_matrix(a, "slice_cols")
    if not (0 <= start <= stop <= a.shape[1]):
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for shape {a.shape}")
    out = a.data[:, start:stop].copy()
    cols = a.shape[1]

    def back(g):
        full = np.zeros((g.shape[0], cols))
        full[:, start:stop] = g
        return ((a, full),)

    return _node(out, "slice_cols", (a,), back)


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Row lookup (embedding): out[i] = table[ids[i]]."""
    table = _coerce(table)
    _require_matrix(table, "gather_rows")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: ids must be a flat sequence, got shape {idx.shape}")
    if idx.size == 0:
        raise ContractError("gather_rows: empty id sequence")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise ContractError(f"gather_rows: id out of range for table with {table.shape[0]} rows")
    out = table.data[idx].copy()

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return ((table, gt),)

    return _node(out, "gather_rows", (table,), back)


# ---- nonlinearities -------------------------------------------------------


def sigmoid(a: Tensor) -> Tensor:
    """Numerically stable logistic function, outputs strictly inside (0, 1)."""
    a = _coerce(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def back(g):
        return ((a, g * out * (1.0 - out)),)

    return _node(out, "sigmoid", (a,), back)


def relu(a: Tensor) -> Tensor:
    a = _coerce(a)
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0

    def back(g):
        return ((a, g * mask),)

    return _node(out, "relu", (a,), back)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax, stabilized by subtracting each row's max."""
    a = _coerce(a)
    _require_matrix(a, "softmax_rows")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def back(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        return ((a, out * (g - inner)),)

    return _node(out, "softmax_rows", (a,), back)


# ---- reductions and fused ops --------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    """Sum of all entries, returned as a 1x1 scalar tensor."""
    a = _coerce(a)
    out = np.array([[a.data.sum()]])

    def back(g):
        return ((a, np.full_like(a.data, g[0, 0])),)

    return _node(out, "sum_all", (a,), back)


def layer_norm_rows(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row layer normalization with learned gain and bias (both 1 x d)."""
    x, gain, bias = _coerce(x), _coerce(gain), _coerce(bias)
    _require_matrix(x, "layer_norm_rows")
    d = x.shape[1]
    if gain.shape != (1, d) or bias.shape != (1, d):
        raise ShapeError(
            f"layer_norm_rows: gain/bias must be (1, {d}), got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data

    def back(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gain.data
            gx = inv * (
                dxhat
                - dxhat.mean(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
            )
        ggain = (g * xhat).sum(axis=0, keepdims=True) if gain.requires_grad else None
        gbias = g.sum(axis=0, keepdims=True) if bias.requires_grad else None
        return ((x, gx), (gain, ggain), (bias, gbias))

    return _node(out, "layer_norm_rows", (x, gain, bias), back)


def cross_entropy_rows(logits: Tensor, targets: Sequence[int], weights: Sequence[float]) -> Tensor:
    """Weighted mean negative log-likelihood over rows of a logit matrix.

    ``targets[i]`` is the correct class for row i and ``weights[i]`` its
    contribution (0 masks a padding row out entirely). The result is
    sum(w_i * nll_i) / sum(w_i), so appending zero-weight rows leaves the
    value untouched.
    """
    logits = _coerce(logits)
    _require_matrix(logits, "cross_entropy_rows")
    idx = np.asarray(targets, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    rows, classes = logits.shape
    if idx.shape != (rows,) or w.shape != (rows,):
        raise ShapeError(
            f"cross_entropy_rows: targets/weights must have shape ({rows},), "
            f"got {idx.shape} and {w.shape}"
        )
    if idx.min() < 0 or idx.max() >= classes:
        raise ContractError(f"cross_entropy_rows: target id out of range for {classes} classes")
    denom = w.sum()
    if denom <= 0:
        raise ContractError("cross_entropy_rows: weights sum to zero, nothing to score")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    nll = -logp[np.arange(rows), idx]
    out = np.array([[float((nll * w).sum() / denom)]])

    def back(g):
        p = np.exp(logp)
        p[np.arange(rows), idx] -= 1.0
        return ((logits, p * (w / denom)[:, None] * g[0, 0]),)

    return _node(out, "cross_entropy_rows", (logits,), back)


# ---- backward -------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf below loss.

    The loss must be a scalar (single-element) tensor produced by a
    recorded graph. Each graph node is visited exactly once, in reverse
    topological order; repeated calls keep adding into leaf ``.grad``.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss is not connected to any requires_grad tensor")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    flow: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = flow.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in node._backward(g):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in flow:
                flow[pid] = flow[pid] + pg
            else:
                flow[pid] = pg


# ---- constructors ----------------------------------------------------------


def zeros(rows: int, cols: int, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros((rows, cols)), requires_grad=requires_grad)


def ones(rows: int, cols: int, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones((rows, cols)), requires_grad=requires_grad)


def zeros_like(t: Tensor, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros_like(t.data), requires_grad=requires_grad)


def ones_like(t: Tensor, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones_like(t.data), requires_grad=requires_grad)


def glorot_uniform(rng: np.random.Generator, rows: int, cols: int) -> Tensor:
    """Fan-balanced uniform init, U(+-sqrt(6 / (fan_in + fan_out)))."""
    limit = np.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-limit, limit, size=(rows, cols)), requires_grad=True)
