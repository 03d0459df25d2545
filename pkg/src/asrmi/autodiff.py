"""Small reverse-mode automatic differentiation engine over numpy arrays.

Operations executed while a :class:`Tape` is active are recorded in order;
:meth:`Tape.backward` replays them in reverse to accumulate gradients.
Broadcasting is limited to scalar-vs-tensor; anything else must go through an
explicit op (``add_bias``, ``broadcast_to``) so every gradient rule stays easy
to audit.
"""
from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "GradientMap", "ShapeError", "tensor", "constant",
    "add", "sub", "mul", "neg", "scale", "tanh", "relu", "exp", "log", "sigmoid",
    "matmul", "bmm", "add_bias", "log_softmax", "logsumexp", "sum", "mean",
    "reshape", "transpose", "getitem", "concat", "stack", "where", "gather",
    "broadcast_to", "no_grad",
]

# Smallest positive double is ~4.9e-324 == exp(-745); anything below is zero.
LOG_FLOOR = -745.0


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {' vs '.join(map(str, self.shapes))}")


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

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

    def __getitem__(self, idx):
        return getitem(self, idx)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape


class _Node:
    __slots__ = ("inputs", "output", "vjp")

    def __init__(self, inputs, output, vjp):
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class GradientMap:
    """Mapping tensor -> gradient array; tensors not reached map to zeros."""

    def __init__(self, grads: dict[int, np.ndarray], keep: dict[int, Tensor]):
        self._grads = grads
        self._keep = keep

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(id(t))
        if g is None or self._keep.get(id(t)) is not t:
            return np.zeros(t.shape)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads and self._keep.get(id(t)) is t


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; ops run inside the block are recorded when at
    least one input requires a gradient. Tapes are thread-local.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._ids: set[int] = set()

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def record(self, inputs: Sequence[Tensor], output: Tensor, vjp: Callable) -> None:
        self.nodes.append(_Node(tuple(inputs), output, vjp))
        self._ids.add(id(output))

    def backward(self, loss: Tensor) -> GradientMap:
        if loss.size != 1 or loss.ndim != 0:
            raise ShapeError("backward (loss must be a 0-d scalar)", loss.shape)
        if id(loss) not in self._ids and not loss.requires_grad:
            raise ValueError("backward: loss was not produced on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
        keep: dict[int, Tensor] = {id(loss): loss}
        for node in reversed(self.nodes):
            g_out = grads.get(id(node.output))
            if g_out is None:
                continue
            in_grads = node.vjp(g_out)
            for t, g in zip(node.inputs, in_grads):
                if g is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
                    keep[key] = t
        return GradientMap(grads, keep)


class no_grad:
    """Suspend recording on the current thread."""

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(None)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False


def _emit(data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    tape = _active_tape() if needs else None
    out = Tensor(data, requires_grad=tape is not None)
    if tape is not None:
        tape.record(inputs, out, vjp)
    return out


# ---------------------------------------------------------------------------
# elementwise


def _check_pair(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(op, a.shape, b.shape)


def _unscalar(g: np.ndarray, t: Tensor) -> np.ndarray:
    if t.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum())
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair("add", a, b)
    return _emit(a.data + b.data, (a, b), lambda g: (_unscalar(g, a), _unscalar(g, b)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair("sub", a, b)
    return _emit(a.data - b.data, (a, b), lambda g: (_unscalar(g, a), _unscalar(-g, b)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair("mul", a, b)
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b), lambda g: (_unscalar(g * bd, a), _unscalar(g * ad, b)))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _emit(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return _emit(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    y = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return _emit(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    m = a.data > 0
    return _emit(np.where(m, a.data, 0.0), (a,), lambda g: (g * m,))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    y = np.exp(a.data)
    return _emit(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    """Natural log; zeros (and denormal underflow) map to -inf with zero gradient."""
    a = _as_tensor(a)
    x = a.data
    tiny = x <= np.exp(LOG_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.where(tiny, -np.inf, np.log(np.where(tiny, 1.0, x)))
        inv = np.where(tiny, 0.0, 1.0 / np.where(tiny, 1.0, x))
    return _emit(y, (a,), lambda g: (g * inv,))


# ---------------------------------------------------------------------------
# linear algebra


def _mm(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # single-row products take a gemv path whose rounding differs from gemm;
    # duplicate the row so results never depend on how many rows are batched
    if x.shape[0] == 1:
        return (np.concatenate([x, x]) @ y)[:1]
    return x @ y


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _mm(g, bd.T) if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    return _emit(_mm(ad, bd), (a, b), vjp)


def bmm(a, b) -> Tensor:
    """Batched product: [B, m, k] x [B, k, n] -> [B, m, n]."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError("bmm", a.shape, b.shape)
    ad, bd = a.data, b.data

    def vjp(g):
        ga = np.matmul(g, bd.transpose(0, 2, 1)) if a.requires_grad else None
        gb = np.matmul(ad.transpose(0, 2, 1), g) if b.requires_grad else None
        return ga, gb

    return _emit(np.matmul(ad, bd), (a, b), vjp)


def add_bias(a, bias) -> Tensor:
    """a[..., n] + bias[n]."""
    a, bias = _as_tensor(a), _as_tensor(bias)
    if bias.ndim != 1 or a.ndim == 0 or a.shape[-1] != bias.shape[0]:
        raise ShapeError("add_bias", a.shape, bias.shape)
    lead = tuple(range(a.ndim - 1))
    return _emit(a.data + bias.data, (a, bias), lambda g: (g, g.sum(axis=lead)))


def broadcast_to(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    try:
        y = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError("broadcast_to", a.shape, shape) from None
    extra = len(shape) - a.ndim
    src = (1,) * extra + a.shape
    axes = tuple(i for i, (s, t) in enumerate(zip(src, shape)) if s == 1 and t != 1)

    def vjp(g):
        r = g.sum(axis=axes, keepdims=True) if axes else g
        return (r.reshape(a.shape),)

    return _emit(y, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions and normalisation


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis}", (ndim,))
    return axis % ndim


def logsumexp(a, axis: int = -1) -> Tensor:
    """Stable log(sum(exp(a))) along ``axis``; all -inf slices give -inf."""
    a = _as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m_safe), axis=axis, keepdims=True)) + m_safe
    finite = np.isfinite(out)

    def vjp(g):
        with np.errstate(invalid="ignore"):
            w = np.where(finite, np.exp(x - np.where(finite, out, 0.0)), 0.0)
        return (w * np.expand_dims(g, axis),)

    return _emit(np.squeeze(out, axis=axis), (a,), vjp)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    x = a.data
    if x.shape[axis] < 1:
        raise ShapeError("log_softmax", a.shape)
    m = np.max(x, axis=axis, keepdims=True)
    z = x - m
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def vjp(g):
        return (g - p * np.sum(g, axis=axis, keepdims=True),)

    return _emit(y, (a,), vjp)


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = _as_tensor(a)
    if axis is None:
        shape = a.shape
        return _emit(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))
    axis = _norm_axis(axis, a.ndim)
    return _emit(a.data.sum(axis=axis), (a,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),))


def mean(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    n = a.size if axis is None else a.shape[_norm_axis(axis, a.ndim)]
    return scale(sum(a, axis), 1.0 / n)


# ---------------------------------------------------------------------------
# structure


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    src = a.shape
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", src, shape) from None
    return _emit(y, (a,), lambda g: (g.reshape(src),))


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a, idx) -> Tensor:
    """Basic (slice/int) indexing; advanced indexing goes through ``gather``."""
    a = _as_tensor(a)
    y = a.data[idx]
    if not np.shares_memory(y, a.data) and y.size:
        raise TypeError("getitem supports basic indexing only; use gather")

    def vjp(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return (full,)

    return _emit(np.array(y), (a,), vjp)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    axis = _norm_axis(axis, ts[0].ndim)
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
                s != r for i, (s, r) in enumerate(zip(t.shape, ts[0].shape)) if i != axis):
            raise ShapeError("concat", ts[0].shape, t.shape)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _emit(np.concatenate([t.data for t in ts], axis=axis), ts,
                 lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise ShapeError("stack", ts[0].shape, t.shape)
    axis = _norm_axis(axis, ts[0].ndim + 1)
    n = len(ts)
    return _emit(np.stack([t.data for t in ts], axis=axis), ts,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def where(mask, a, b) -> Tensor:
    """Select ``a`` where the constant boolean ``mask`` holds, else ``b``."""
    a, b = _as_tensor(a), _as_tensor(b)
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=bool)
    if not (m.shape == a.shape == b.shape):
        raise ShapeError("where", m.shape, a.shape, b.shape)
    return _emit(np.where(m, a.data, b.data), (a, b),
                 lambda g: (np.where(m, g, 0.0), np.where(m, 0.0, g)))


def gather(a, index) -> Tensor:
    """out[..., j] = a[..., index[..., j]] along the last axis.

    ``index`` must have the same leading shape as ``a``.
    """
    a = _as_tensor(a)
    idx = np.asarray(index, dtype=np.intp)
    if idx.ndim != a.ndim or idx.shape[:-1] != a.shape[:-1]:
        raise ShapeError("gather", a.shape, idx.shape)
    y = np.take_along_axis(a.data, idx, axis=-1)

    def vjp(g):
        full = np.zeros(a.shape)
        lead = np.indices(idx.shape, sparse=True)[:-1]
        np.add.at(full, (*lead, idx), g)
        return (full,)

    return _emit(y, (a,), vjp)
