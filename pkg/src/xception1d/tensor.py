"""Dense tensors with tape-based reverse-mode automatic differentiation.

Every differentiable operation creates a :class:`Node` holding references to
its inputs and a closure that maps the output gradient to input gradients.
:func:`backward` orders the recorded nodes topologically, runs the closures in
reverse and releases the tape afterwards, so a graph can be consumed once.

Data lives in numpy arrays. Training uses float32; passing float64 arrays
keeps every downstream op in float64, which is what gradient checking uses.
"""

from __future__ import annotations

import contextlib
import os
import threading
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32

# Finite-value assertions after each forward op; off by default (hot path).
CHECK_FINITE = bool(os.environ.get("XCEPTION1D_DEBUG"))


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        joined = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class GraphError(RuntimeError):
    pass


class Node:
    """One recorded primitive: inputs, op name and backward rule."""

    __slots__ = ("op", "inputs", "backward_fn", "consumed")

    def __init__(self, op: str, inputs: tuple, backward_fn: Callable):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.consumed = False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        arr = np.asarray(data, dtype=dtype)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: Node | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p: float):
        return power(self, p)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def var(self, axis=None, keepdims=False):
        return reduce_var(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _make(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(t.data)) for t in inputs):
            raise FloatingPointError(f"{op}: non-finite output from finite inputs")
    out = Tensor(data, dtype=data.dtype)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(op, tuple(inputs), backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", a.data + b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make("mul", a.data * b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not isinstance(a, Tensor):
        a, b = as_tensor(a), as_tensor(b)
    return a, b


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    tracker = _state.relu_margin
    if tracker is not None:
        tracker.observe(x.data)
    return _make("relu", np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _make("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def power(x: Tensor, p: float) -> Tensor:
    out = x.data ** p
    return _make("power", out, (x,), lambda g: (g * p * x.data ** (p - 1),))


# ---------------------------------------------------------------------------
# linear algebra and reductions
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    counter = _state.macs
    if counter is not None:
        counter.add("matmul", a.shape[0] * a.shape[1] * b.shape[1])

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make("matmul", a.data @ b.data, (a, b), bw)


def _norm_axes(axis, ndim: int) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand_reduced(g: np.ndarray, shape: tuple, axes: tuple, keepdims: bool) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)

    def bw(g):
        return (np.array(_expand_reduced(g, x.shape, axes, keepdims)),)

    return _make("reduce_sum", np.asarray(x.data.sum(axis=axes, keepdims=keepdims)), (x,), bw)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise ShapeError("reduce_mean", x.shape)

    def bw(g):
        return (_expand_reduced(g, x.shape, axes, keepdims) / count,)

    return _make("reduce_mean", np.asarray(x.data.mean(axis=axes, keepdims=keepdims)), (x,), bw)


def reduce_var(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Biased (divide-by-count) variance."""
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise ShapeError("reduce_var", x.shape)
    centered = x.data - x.data.mean(axis=axes, keepdims=True)
    out = np.asarray((centered * centered).mean(axis=axes, keepdims=keepdims))

    def bw(g):
        return (_expand_reduced(g, x.shape, axes, keepdims) * (2.0 / count) * centered,)

    return _make("reduce_var", out, (x,), bw)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: tuple) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None
    return _make("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError("broadcast", x.shape, shape) from None
    return _make("broadcast", np.array(out), (x,), lambda g: (_unbroadcast(g, x.shape),))


def slice_(x: Tensor, index) -> Tensor:
    try:
        out = x.data[index]
    except IndexError:
        raise ShapeError("slice", x.shape) from None

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _make("slice", np.array(out), (x,), bw)


def pad(x: Tensor, widths: Sequence[tuple[int, int]]) -> Tensor:
    """Zero padding; ``widths`` has one (before, after) pair per axis."""
    widths = [tuple(w) for w in widths]
    if len(widths) != x.ndim or any(w < 0 for pair in widths for w in pair):
        raise ShapeError("pad", x.shape, (len(widths),))
    out = np.pad(x.data, widths)
    index = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, x.shape))
    return _make("pad", out, (x,), lambda g: (g[index],))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return _make("concat", out, tensors, bw)


# ---------------------------------------------------------------------------
# fused 1D convolution kernels
# ---------------------------------------------------------------------------

def same_padding(length: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """(left, right, out_length) for centered same-zero padding."""
    out_len = -(-length // stride)
    left = (kernel - 1) // 2
    right = max(0, (out_len - 1) * stride + kernel - (length + left))
    return left, right, out_len


def _windows(x: np.ndarray, kernel: int, stride: int):
    left, right, out_len = same_padding(x.shape[2], kernel, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (left, right)))
    win = sliding_window_view(xp, kernel, axis=2)[:, :, ::stride][:, :, :out_len]
    return win, xp.shape, left, out_len


def _fold_windows(dwin: np.ndarray, padded_shape: tuple, left: int, length: int, stride: int) -> np.ndarray:
    """Scatter-add window gradients [B, C, L_out, k] back onto the input axis."""
    dxp = np.zeros(padded_shape, dtype=dwin.dtype)
    out_len = dwin.shape[2]
    stop = stride * (out_len - 1) + 1
    for k in range(dwin.shape[3]):
        dxp[:, :, k:k + stop:stride] += dwin[:, :, :, k]
    return dxp[:, :, left:left + length]


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Cross-correlation with centered zero padding; output length ceil(L / stride).

    x: [B, C_in, L], weight: [N, C_in, m], bias: [N].
    """
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv1d", x.shape, weight.shape)
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError("conv1d", weight.shape, bias.shape)
    if stride < 1 or x.shape[2] < 1:
        raise ShapeError("conv1d", x.shape, (stride,))
    n_out, c_in, kernel = weight.shape
    batch, _, length = x.shape
    win, padded_shape, left, out_len = _windows(x.data, kernel, stride)
    counter = _state.macs
    if counter is not None:
        counter.add("conv1d", batch * out_len * c_in * kernel * n_out)

    out = np.tensordot(win, weight.data, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = np.ascontiguousarray(out)
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        dw = np.tensordot(g, win, axes=([0, 2], [0, 2]))
        dwin = np.tensordot(g, weight.data, axes=([1], [0]))  # [B, L_out, C, m]
        dx = _fold_windows(dwin.transpose(0, 2, 1, 3), padded_shape, left, length, stride)
        grads = (dx, dw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2)),)
        return grads

    return _make("conv1d", out, inputs, bw)


def depthwise_conv1d(x: Tensor, weight: Tensor, stride: int = 1) -> Tensor:
    """One filter per channel. x: [B, C, L], weight: [C, 1, S]."""
    if x.ndim != 3 or weight.ndim != 3 or weight.shape[1] != 1 or x.shape[1] != weight.shape[0]:
        raise ShapeError("depthwise_conv1d", x.shape, weight.shape)
    channels, _, kernel = weight.shape
    batch, _, length = x.shape
    win, padded_shape, left, out_len = _windows(x.data, kernel, stride)
    counter = _state.macs
    if counter is not None:
        counter.add("depthwise_conv1d", batch * out_len * channels * kernel)
    w = weight.data[:, 0, :]
    out = np.einsum("bclk,ck->bcl", win, w)

    def bw(g):
        dw = np.einsum("bcl,bclk->ck", g, win)[:, None, :]
        dwin = g[:, :, :, None] * w[None, :, None, :]
        dx = _fold_windows(dwin, padded_shape, left, length, stride)
        return dx, dw

    return _make("depthwise_conv1d", out, (x, weight), bw)


# ---------------------------------------------------------------------------
# instrumentation
# ---------------------------------------------------------------------------

class MacCounter:
    """Multiply-accumulate tally filled by the kernels while active."""

    def __init__(self):
        self.by_op: dict[str, int] = {}

    def add(self, op: str, n: int) -> None:
        self.by_op[op] = self.by_op.get(op, 0) + int(n)

    @property
    def total(self) -> int:
        return sum(self.by_op.values())


class _ReluMargin:
    def __init__(self):
        self.min_abs = np.inf

    def observe(self, data: np.ndarray) -> None:
        # exact zeros come from an upstream relu and cannot sit on a kink
        mags = np.abs(data[data != 0])
        if mags.size:
            self.min_abs = min(self.min_abs, float(mags.min()))


class _State(threading.local):
    macs: MacCounter | None = None
    relu_margin: _ReluMargin | None = None


_state = _State()


@contextlib.contextmanager
def count_macs() -> Iterator[MacCounter]:
    previous = _state.macs
    _state.macs = counter = MacCounter()
    try:
        yield counter
    finally:
        _state.macs = previous


@contextlib.contextmanager
def track_relu_margin() -> Iterator[_ReluMargin]:
    """Record the smallest |input| seen by any relu (distance to the kink)."""
    previous = _state.relu_margin
    _state.relu_margin = tracker = _ReluMargin()
    try:
        yield tracker
    finally:
        _state.relu_margin = previous


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

class Graph:
    """Nodes reachable from a root, in topological order (inputs first)."""

    def __init__(self, root: Tensor):
        self.root = root
        self.order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                self.order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t._node is not None:
                for parent in t._node.inputs:
                    if id(parent) not in seen:
                        stack.append((parent, False))

    @property
    def nodes(self) -> list[Node]:
        return [t._node for t in self.order if t._node is not None]

    def leaves(self) -> list[Tensor]:
        return [t for t in self.order if t._node is None and t.requires_grad]


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
    if root.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {root.shape}")
    if root._node is None:
        if root.requires_grad:
            root.grad = _accumulate(root.grad, np.ones_like(root.data))
            return
        raise GraphError("root was not produced by a recorded graph")
    if root._node.consumed:
        raise GraphError("graph already consumed by a previous backward pass")

    graph = Graph(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for t in reversed(graph.order):
        g = grads.pop(id(t), None)
        node = t._node
        if node is None:
            if t.requires_grad and g is not None:
                t.grad = _accumulate(t.grad, g)
            continue
        if node.consumed:
            raise GraphError(f"graph already consumed (node {node.op})")
        if g is not None:
            for parent, pg in zip(node.inputs, node.backward_fn(g)):
                if parent.requires_grad and pg is not None:
                    key = id(parent)
                    grads[key] = grads[key] + pg if key in grads else np.asarray(pg, dtype=parent.dtype)
        # free the tape as we go
        node.consumed = True
        node.inputs = ()
        node.backward_fn = None


def _accumulate(existing, g):
    return np.array(g) if existing is None else existing + g


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor | np.ndarray, h: float = 1e-4) -> float:
    """Max relative error between backprop and central differences of ``f`` at ``x``.

    Works in float64 regardless of the dtype of ``x``. The per-coordinate error
    is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    out = f(xt)
    backward(out)
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x0)
    numeric = numeric_grad(lambda a: float(f(Tensor(a)).data.sum()), x0, h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad
