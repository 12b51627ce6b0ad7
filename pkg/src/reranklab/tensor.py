"""Dense float64 tensors with reverse-mode automatic differentiation.

Ops compute eagerly with numpy. When a :class:`Tape` is active and the
result requires gradients, the op records a node carrying its local
backward rule. ``Tape.backward`` walks the node list once in reverse
(forward execution order is already topological) and accumulates
gradients into every ``requires_grad`` tensor it reaches. Gradients
accumulate across backward calls; callers zero them between steps.

Tensors and tapes are single-context objects: independent tapes may run
in parallel, but one tape must never be shared across threads.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "as_tensor",
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "relu",
    "sigmoid",
    "tanh",
    "log",
    "clip",
    "softmax",
    "layer_norm",
    "embedding_lookup",
    "reduce_sum",
    "reduce_mean",
    "finite_diff_grad",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


_TAPE_STACK: list["Tape"] = []


class _Node:
    __slots__ = ("inputs", "output", "rule")

    def __init__(self, inputs, output, rule):
        self.inputs = inputs
        self.output = output
        self.rule = rule


class Tape:
    """Ordered record of differentiable ops for one backward pass.

    Used as a context manager::

        with Tape() as tape:
            loss = f(params)
        tape.backward(loss)

    ``visit_counts`` holds, after each ``backward`` call, how often every
    node was visited during that traversal (always exactly once).
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.visit_counts: list[int] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def _record(self, inputs, output, rule):
        output.node_id = len(self.nodes)
        output._tape = self
        self.nodes.append(_Node(inputs, output, rule))

    def backward(self, loss: "Tensor") -> None:
        """Accumulate d(loss)/d(tensor) into ``.grad`` of reachable tensors.

        ``loss`` must be a single-element tensor produced on this tape.
        """
        if loss.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
        if not self.nodes:
            raise ValueError("backward on an empty tape")
        if loss._tape is not self or loss.node_id is None:
            raise ValueError("loss was not produced on this tape")

        self.visit_counts = [0] * len(self.nodes)
        # id(tensor) -> (tensor, accumulated gradient); entries are never
        # mutated in place, only rebound, so aliasing rule outputs is safe.
        pending: dict[int, tuple["Tensor", np.ndarray]] = {
            id(loss): (loss, np.ones_like(loss.data))
        }

        for idx in range(len(self.nodes) - 1, -1, -1):
            node = self.nodes[idx]
            self.visit_counts[idx] += 1
            entry = pending.get(id(node.output))
            if entry is None:
                continue  # node did not contribute to the loss
            out_grad = entry[1]
            for tensor, grad in zip(node.inputs, node.rule(out_grad)):
                if grad is None or not tensor.requires_grad:
                    continue
                prev = pending.get(id(tensor))
                if prev is None:
                    pending[id(tensor)] = (tensor, grad)
                else:
                    pending[id(tensor)] = (tensor, prev[1] + grad)

        for tensor, grad in pending.values():
            if tensor.requires_grad:
                tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad


class Tensor:
    """N-dimensional float64 array with an attached gradient slot.

    The shape is fixed at construction. ``grad`` starts as None and is
    filled (and thereafter accumulated into) by ``Tape.backward``.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64, order="C")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self._tape: Optional[Tape] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Run the recording tape's backward pass from this scalar."""
        if self._tape is None:
            raise ValueError("tensor was not recorded on a tape")
        self._tape.backward(self)

    def sum(self, axis=None) -> "Tensor":
        return reduce_sum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return reduce_mean(self, axis)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    """Wrap scalars/arrays as constant tensors; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _emit(inputs: tuple[Tensor, ...], data: np.ndarray, rule) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(t.requires_grad for t in inputs)
    if _TAPE_STACK and out.requires_grad:
        _TAPE_STACK[-1]._record(inputs, out, rule)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shapes(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul requires rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")

    def rule(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    return _emit((a, b), a.data @ b.data, rule)


def transpose(a) -> Tensor:
    """Transpose of a rank-2 tensor."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose requires a rank-2 tensor, got {a.shape}")

    def rule(g):
        return (np.ascontiguousarray(g.T),)

    return _emit((a,), np.ascontiguousarray(a.data.T), rule)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "add")

    def rule(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return _emit((a, b), a.data + b.data, rule)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "sub")

    def rule(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return _emit((a, b), a.data - b.data, rule)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "mul")

    def rule(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return _emit((a, b), a.data * b.data, rule)


def relu(a) -> Tensor:
    a = as_tensor(a)

    def rule(g):
        return (g * (a.data > 0),)

    return _emit((a,), np.maximum(a.data, 0.0), rule)


def sigmoid(a) -> Tensor:
    """Logistic function, numerically stable for large |x|."""
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def rule(g):
        return (g * out * (1.0 - out),)

    return _emit((a,), out, rule)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def rule(g):
        return (g * (1.0 - out * out),)

    return _emit((a,), out, rule)


def log(a) -> Tensor:
    """Natural logarithm; caller is responsible for positive inputs."""
    a = as_tensor(a)

    def rule(g):
        return (g / a.data,)

    return _emit((a,), np.log(a.data), rule)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes through inside the interval."""
    a = as_tensor(a)

    def rule(g):
        return (g * ((a.data >= lo) & (a.data <= hi)),)

    return _emit((a,), np.clip(a.data, lo, hi), rule)


# ---------------------------------------------------------------------------
# normalization and gathering


def softmax(a, axis: int) -> Tensor:
    """Softmax along ``axis``, stabilized by max subtraction."""
    a = as_tensor(a)
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.shape}")
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out = ex / np.sum(ex, axis=axis, keepdims=True)

    def rule(g):
        inner = np.sum(g * out, axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _emit((a,), out, rule)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    if a.data.ndim < 1 or a.shape[-1] < 1:
        raise ShapeError(f"layer_norm: normalized axis empty in shape {a.shape}")
    n = a.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match axis length {n}"
        )
    mu = np.mean(a.data, axis=-1, keepdims=True)
    centered = a.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def rule(g):
        dgain = (g * xhat).reshape(-1, n).sum(axis=0) if gain.requires_grad else None
        dbias = g.reshape(-1, n).sum(axis=0) if bias.requires_grad else None
        if a.requires_grad:
            dxhat = g * gain.data
            dvar = np.sum(dxhat * centered, axis=-1, keepdims=True) * (-0.5) * inv**3
            dmu = -np.sum(dxhat, axis=-1, keepdims=True) * inv + dvar * np.mean(
                -2.0 * centered, axis=-1, keepdims=True
            )
            da = dxhat * inv + dvar * 2.0 * centered / n + dmu / n
        else:
            da = None
        return (da, dgain, dbias)

    return _emit((a, gain, bias), xhat * gain.data + bias.data, rule)


def embedding_lookup(table, ids) -> Tensor:
    """Gather rows of a rank-2 table; backward scatter-adds row gradients."""
    table = as_tensor(table)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding_lookup requires a rank-2 table, got {table.shape}")
    ids = np.asarray(ids, dtype=np.intp).reshape(-1)
    rows = table.shape[0]
    if ids.size:
        bad = ids[(ids < 0) | (ids >= rows)]
        if bad.size:
            raise IndexError(f"embedding_lookup: id {int(bad[0])} out of range [0, {rows})")

    def rule(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids, g)
        return (dt,)

    return _emit((table,), table.data[ids], rule)


# ---------------------------------------------------------------------------
# reductions


def _normalize_axis(axis, ndim):
    if axis is None:
        return None
    if not -ndim <= axis < ndim:
        raise ShapeError(f"reduction axis {axis} invalid for rank {ndim}")
    return axis % ndim


def reduce_sum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    axis = _normalize_axis(axis, a.data.ndim)

    def rule(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _emit((a,), np.sum(a.data, axis=axis), rule)


def reduce_mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    axis = _normalize_axis(axis, a.data.ndim)
    n = a.size if axis is None else a.shape[axis]

    def rule(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy() / n,)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy() / n,)

    return _emit((a,), np.mean(a.data, axis=axis), rule)


# ---------------------------------------------------------------------------
# independent gradient oracle


def finite_diff_grad(f: Callable[[Tensor], object], x: Tensor, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of a scalar function at ``x``.

    ``f`` must be pure; it is called with ``x`` whose buffer is perturbed
    one coordinate at a time and restored afterwards. Serves as the
    independent oracle for checking ``Tape.backward``.
    """
    if h <= 0:
        raise ValueError("finite_diff_grad requires h > 0")

    def evaluate() -> float:
        out = f(x)
        return out.item() if isinstance(out, Tensor) else float(out)

    base = x.data.copy()
    grad = np.zeros_like(base)
    flat = x.data.reshape(-1)
    try:
        for i in range(flat.size):
            orig = base.reshape(-1)[i]
            flat[i] = orig + h
            fp = evaluate()
            flat[i] = orig - h
            fm = evaluate()
            flat[i] = orig
            grad.reshape(-1)[i] = (fp - fm) / (2.0 * h)
    finally:
        x.data[...] = base
    return Tensor(grad)
