"""Dense float64 tensors with reverse-mode automatic differentiation.

Tensors are immutable after construction and carry an optional reference
to the Tape that recorded them.  A Tape is an explicit, scoped object:
create one per training step, watch the leaves you want gradients for,
run the forward computation, call ``backward``, drop the tape.  Taped and
untaped evaluation run the same numpy kernels, so forward values are
bit-identical either way.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, ndtr

_LOG_2PI = float(np.log(2.0 * np.pi))


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


class TapeError(RuntimeError):
    """Raised on misuse of a Tape (wrong tape, non-scalar loss, ...)."""


def _f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """Immutable dense float64 array, optionally recorded on a Tape."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: "Tape | None" = None, node: int | None = None):
        self.data = _f64(data)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        """The underlying buffer; treat it as read-only."""
        return self.data

    def __repr__(self) -> str:
        taped = " taped" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{taped})\n{self.data!r}"

    # Arithmetic sugar; everything routes through the module-level ops so
    # that tape recording lives in one place.
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))


class _Node:
    __slots__ = ("inputs",)

    def __init__(self, inputs):
        # inputs: list of (node index, vjp callable) pairs
        self.inputs = inputs


class Tape:
    """Append-only record of operations for one reverse-mode pass.

    A tape is confined to one logical thread of execution; concurrent
    training runs must each own a private tape.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._watched: list[Tensor] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def watch(self, value) -> Tensor:
        """Register a trainable leaf and return its taped handle."""
        data = value.data if isinstance(value, Tensor) else _f64(value)
        leaf = Tensor(data, self, len(self._nodes))
        self._nodes.append(_Node([]))
        self._watched.append(leaf)
        return leaf

    def _emit(self, data: np.ndarray, partials) -> Tensor:
        node = _Node([(t.node, fn) for t, fn in partials])
        out = Tensor(data, self, len(self._nodes))
        self._nodes.append(node)
        return out

    def backward(self, loss: Tensor) -> dict[Tensor, Tensor]:
        """Gradients of a scalar loss with respect to every watched leaf.

        Leaves not reachable from the loss get a zero gradient.
        """
        if loss.tape is not self:
            raise TapeError("loss was not recorded on this tape")
        if loss.size != 1:
            raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
        grads: list[np.ndarray | None] = [None] * len(self._nodes)
        grads[loss.node] = np.ones_like(loss.data)
        for i in range(loss.node, -1, -1):
            g = grads[i]
            if g is None:
                continue
            for j, vjp in self._nodes[i].inputs:
                gj = vjp(g)
                if grads[j] is None:
                    grads[j] = np.array(gj, dtype=np.float64, copy=True)
                else:
                    grads[j] += gj
        out = {}
        for leaf in self._watched:
            g = grads[leaf.node]
            out[leaf] = Tensor(np.zeros_like(leaf.data) if g is None else g)
        return out


def _common_tape(tensors: Sequence[Tensor]) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise TapeError("operands recorded on different tapes")
    return tape


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape``, inverting numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _apply(fwd: Callable, inputs: Sequence, vjps: Sequence[Callable | None]) -> Tensor:
    """Run ``fwd`` on raw buffers and record vjps for taped inputs."""
    ts = [as_tensor(x) for x in inputs]
    tape = _common_tape(ts)
    data = fwd(*[t.data for t in ts])
    if tape is None:
        return Tensor(data)
    partials = [(t, vjp) for t, vjp in zip(ts, vjps)
                if t.tape is not None and vjp is not None]
    return tape._emit(data, partials)


# ---------------------------------------------------------------------------
# elementwise and linear ops


def _broadcast_guard(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_guard(a.data, b.data, "add")
    return _apply(np.add, (a, b),
                  (lambda g: _unbroadcast(g, a.shape),
                   lambda g: _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_guard(a.data, b.data, "sub")
    return _apply(np.subtract, (a, b),
                  (lambda g: _unbroadcast(g, a.shape),
                   lambda g: _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_guard(a.data, b.data, "mul")
    return _apply(np.multiply, (a, b),
                  (lambda g: _unbroadcast(g * b.data, a.shape),
                   lambda g: _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_guard(a.data, b.data, "div")
    return _apply(np.divide, (a, b),
                  (lambda g: _unbroadcast(g / b.data, a.shape),
                   lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _apply(np.negative, (a,), (lambda g: -g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _apply(lambda x: out, (a,), (lambda g: g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _apply(np.log, (a,), (lambda g: g / a.data,))


def sqrt(a) -> Tensor:
    """Elementwise square root; subgradient 0 at exactly 0."""
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def vjp(g):
        safe = np.where(out > 0.0, out, 1.0)
        return np.where(out > 0.0, 0.5 * g / safe, 0.0)

    return _apply(lambda x: out, (a,), (vjp,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _apply(lambda x: out, (a,), (lambda g: g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _apply(lambda x: np.maximum(x, 0.0), (a,),
                  (lambda g: g * (a.data > 0.0),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return _apply(lambda x: np.logaddexp(0.0, x), (a,),
                  (lambda g: g * expit(a.data),))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _apply(np.abs, (a,), (lambda g: g * np.sign(a.data),))


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_guard(a.data, b.data, "maximum")
    mask = a.data >= b.data
    return _apply(np.maximum, (a, b),
                  (lambda g: _unbroadcast(g * mask, a.shape),
                   lambda g: _unbroadcast(g * ~mask, b.shape)))


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_guard(a.data, b.data, "minimum")
    mask = a.data <= b.data
    return _apply(np.minimum, (a, b),
                  (lambda g: _unbroadcast(g * mask, a.shape),
                   lambda g: _unbroadcast(g * ~mask, b.shape)))


def clip(a, lo, hi) -> Tensor:
    return minimum(maximum(a, lo), hi)


def normal_cdf(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return g * np.exp(-0.5 * a.data * a.data - 0.5 * _LOG_2PI)

    return _apply(ndtr, (a,), (vjp,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")

    def vjp_a(g):
        return _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)

    def vjp_b(g):
        return _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)

    return _apply(np.matmul, (a, b), (vjp_a, vjp_b))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    tape = _common_tape(ts)
    data = np.concatenate([t.data for t in ts], axis=axis)
    if tape is None:
        return Tensor(data)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)
    partials = []
    for i, t in enumerate(ts):
        if t.tape is None:
            continue
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g, lo=lo, hi=hi):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        partials.append((t, vjp))
    return tape._emit(data, partials)


def _check_index(idx: np.ndarray, extent: int, op: str) -> np.ndarray:
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError(f"{op}: indices must be integers, got dtype {idx.dtype}")
    if idx.size:
        lo, hi = idx.min(), idx.max()
        if lo < 0 or hi >= extent:
            bad = int(lo) if lo < 0 else int(hi)
            raise ShapeError(f"{op}: index {bad} out of range [0, {extent})")
    return idx


def gather(a, indices, axis: int = 0) -> Tensor:
    """Select slices of ``a`` along ``axis`` (numpy ``take`` semantics).

    The gradient scatter-adds into a zero tensor of ``a``'s shape.
    """
    a = as_tensor(a)
    idx = _check_index(indices, a.shape[axis], "gather")

    def vjp(g):
        out = np.zeros_like(a.data)
        gm = np.moveaxis(g, tuple(range(axis, axis + idx.ndim)), tuple(range(idx.ndim)))
        np.add.at(np.moveaxis(out, axis, 0), idx, gm)
        return out

    return _apply(lambda x: np.take(x, idx, axis=axis), (a,), (vjp,))


def _along_index(idx: np.ndarray, axis: int):
    grids = list(np.ogrid[tuple(slice(n) for n in idx.shape)])
    grids[axis] = idx
    return tuple(grids)


def take_along(a, indices, axis: int) -> Tensor:
    """Batched selection along ``axis`` (numpy ``take_along_axis`` semantics)."""
    a = as_tensor(a)
    axis_ = axis % a.ndim
    idx = _check_index(indices, a.shape[axis_], "take_along")
    if idx.ndim != a.ndim:
        raise ShapeError(f"take_along: index ndim {idx.ndim} != tensor ndim {a.ndim}")
    target = a.shape[:axis_] + (idx.shape[axis_],) + a.shape[axis_ + 1:]
    try:
        idx_b = np.broadcast_to(idx, target)
    except ValueError:
        raise ShapeError(
            f"take_along: index shape {idx.shape} does not broadcast against "
            f"tensor shape {a.shape} on axis {axis_}") from None

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, _along_index(idx_b, axis_), g)
        return out

    return _apply(lambda x: np.take_along_axis(x, idx_b, axis=axis_), (a,), (vjp,))


def _restore_axes(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None or keepdims:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    expanded = list(g.shape)
    for a in sorted(axes):
        expanded.insert(a, 1)
    return np.broadcast_to(g.reshape(expanded), shape)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    return _apply(lambda x: np.sum(x, axis=axis, keepdims=keepdims), (a,),
                  (lambda g: _restore_axes(g, a.shape, axis, keepdims),))


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))

    def vjp(g):
        return _restore_axes(g, a.shape, axis, keepdims) / count

    return _apply(lambda x: np.mean(x, axis=axis, keepdims=keepdims), (a,), (vjp,))


def reduce_max(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Max along one axis; the gradient flows to the first argmax."""
    a = as_tensor(a)
    axis_ = axis % a.ndim
    argmax = np.argmax(a.data, axis=axis_)
    idx = np.expand_dims(argmax, axis_)

    def fwd(x):
        out = np.take_along_axis(x, idx, axis=axis_)
        return out if keepdims else np.squeeze(out, axis=axis_)

    def vjp(g):
        out = np.zeros_like(a.data)
        gk = g if keepdims else np.expand_dims(g, axis_)
        np.add.at(out, _along_index(idx, axis_), gk)
        return out

    return _apply(fwd, (a,), (vjp,))


def squared_l2_norm(a) -> Tensor:
    """Sum of squares along the last axis."""
    a = as_tensor(a)
    return reduce_sum(mul(a, a), axis=-1)


def softmax(a) -> Tensor:
    """Softmax along the last axis (numerically stabilized)."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return out * (g - np.sum(g * out, axis=-1, keepdims=True))

    return _apply(lambda x: out, (a,), (vjp,))


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    out = shifted - lse

    def vjp(g):
        return g - np.exp(out) * np.sum(g, axis=-1, keepdims=True)

    return _apply(lambda x: out, (a,), (vjp,))


def logsumexp(a) -> Tensor:
    """Log-sum-exp along the last axis."""
    a = as_tensor(a)
    m = a.data.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.squeeze(m, -1) + np.log(np.sum(np.exp(a.data - m), axis=-1))

    def vjp(g):
        soft = np.exp(a.data - np.expand_dims(out, -1))
        return np.expand_dims(g, -1) * soft

    return _apply(lambda x: out, (a,), (vjp,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _apply(lambda x: x.reshape(shape), (a,),
                  (lambda g: g.reshape(a.shape),))


def expand_dims(a, axis: int) -> Tensor:
    a = as_tensor(a)
    return _apply(lambda x: np.expand_dims(x, axis), (a,),
                  (lambda g: np.squeeze(g, axis),))


def squeeze(a, axis: int) -> Tensor:
    a = as_tensor(a)
    return _apply(lambda x: np.squeeze(x, axis), (a,),
                  (lambda g: np.expand_dims(g, axis),))


def stop_gradient(a) -> Tensor:
    """Value-identical tensor detached from any tape."""
    a = as_tensor(a)
    return Tensor(a.data)
