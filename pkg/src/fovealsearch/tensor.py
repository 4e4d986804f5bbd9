"""Dense tensors with reverse-mode automatic differentiation on an explicit tape.

Values are numpy arrays in a globally selectable float width (32-bit for
training speed, 64-bit for gradient checking).  Operations record backward
rules on the innermost active :class:`Tape`; with no tape active they are
plain array math, so inference carries no autodiff overhead.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "NumericError",
    "Tensor",
    "Tape",
    "set_default_dtype",
    "default_dtype",
    "using_dtype",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "tanh",
    "sigmoid",
    "hard_sigmoid",
    "relu",
    "exp",
    "log",
    "clip",
    "sqrt",
    "dense",
    "conv2d",
    "softmax",
    "reshape",
    "stack",
    "concat",
    "index_axis0",
    "crop2d",
]


class NumericError(ArithmeticError):
    """An operation produced or received non-finite (NaN/Inf) values."""


_DTYPES = {"float32": np.dtype(np.float32), "float64": np.dtype(np.float64)}
_default_dtype = _DTYPES["float32"]


def set_default_dtype(name: str) -> None:
    """Select the global float width ("float32" or "float64")."""
    global _default_dtype
    if name not in _DTYPES:
        raise ValueError(f"unsupported dtype {name!r}; pick one of {sorted(_DTYPES)}")
    _default_dtype = _DTYPES[name]


def default_dtype() -> np.dtype:
    return _default_dtype


@contextmanager
def using_dtype(name: str):
    """Temporarily switch the global float width."""
    previous = _default_dtype.name
    set_default_dtype(name)
    try:
        yield
    finally:
        set_default_dtype(previous)


_tape_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_tape_state, "stack", None)
    if stack is None:
        stack = []
        _tape_state.stack = stack
    return stack


def _active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


def _check_finite(data: np.ndarray, where: str) -> None:
    if not np.isfinite(data).all():
        raise NumericError(f"{where}: non-finite values encountered")


class Tensor:
    """Immutable-shaped dense array, optionally participating in a tape.

    ``data`` is row-major; reshapes share the underlying buffer.  Any
    non-finite value is rejected at construction so numerical bugs surface
    at the operation that caused them.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                arr = data
            else:
                arr = np.asarray(data, dtype=_default_dtype)
        else:
            arr = np.asarray(data, dtype=dtype)
        _check_finite(arr, "Tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"item() requires a scalar tensor, got shape {self.shape}")

    def assign(self, data: np.ndarray) -> None:
        """Replace the value in place (same shape); used by optimizers."""
        arr = np.asarray(data, dtype=self.data.dtype)
        if arr.shape != self.data.shape:
            raise ValueError(f"assign shape mismatch: {arr.shape} vs {self.data.shape}")
        _check_finite(arr, "assign")
        self.data = arr

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def flatten(self) -> "Tensor":
        return reshape(self, (-1,))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _reduce_mean(self, axis, keepdims)

    def __repr__(self) -> str:
        grad = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple, backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of primitive operations for one backward pass.

    Entering the tape as a context manager makes it the recording target.
    Operations append in execution order, so the list is already
    topologically sorted; ``gradients`` walks it once in reverse and
    accumulates additively wherever a value fans out.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._produced: set[int] = set()
        self._leaves: dict[int, Tensor] = {}
        self._watched: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, traceback) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape context exited out of order")
        stack.pop()

    def watch(self, *tensors: Tensor) -> None:
        """Track gradients for tensors that do not require them by default."""
        for t in tensors:
            self._watched[id(t)] = t

    def _tracks(self, tensor: Tensor) -> bool:
        i = id(tensor)
        return tensor.requires_grad or i in self._produced or i in self._watched

    def _record(self, out: Tensor, inputs: tuple, backward: Callable) -> None:
        self._nodes.append(_Node(out, inputs, backward))
        self._produced.add(id(out))
        for t in inputs:
            if t.requires_grad and id(t) not in self._produced:
                self._leaves.setdefault(id(t), t)

    def gradients(self, loss: Tensor, params: Iterable[Tensor] | None = None) -> dict:
        """Backward pass from a scalar loss.

        Returns a dict keyed by parameter Tensor.  Every requested parameter
        gets an entry; ones the loss does not depend on get exact zeros.
        """
        if loss.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise ValueError("loss was not recorded on this tape")

        accum: dict[int, np.ndarray] = {
            id(loss): np.ones(loss.shape, dtype=loss.data.dtype)
        }
        for node in reversed(self._nodes):
            out_grad = accum.get(id(node.out))
            if out_grad is None:
                continue
            in_grads = node.backward(out_grad)
            for tensor, grad in zip(node.inputs, in_grads):
                if grad is None or not self._tracks(tensor):
                    continue
                key = id(tensor)
                if key in accum:
                    accum[key] = accum[key] + grad
                else:
                    accum[key] = grad

        if params is None:
            targets = list(self._leaves.values()) + [
                t for i, t in self._watched.items() if i not in self._leaves
            ]
        else:
            targets = list(params)
        result: dict[Tensor, Tensor] = {}
        for t in targets:
            g = accum.get(id(t))
            if g is None:
                g = np.zeros(t.shape, dtype=t.data.dtype)
            result[t] = Tensor(np.broadcast_to(g, t.shape).copy() if g.shape != t.shape else g)
        return result


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _emit(name: str, out_data: np.ndarray, inputs: tuple, backward: Callable) -> Tensor:
    _check_finite(out_data, name)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = _active_tape()
    if tape is not None and any(tape._tracks(t) for t in inputs):
        tape._record(out, inputs, backward)
    return out


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit("sub", out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit("mul", out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _emit("div", out, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _emit("tanh", out, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _emit("sigmoid", out, (a,), backward)


def hard_sigmoid(a) -> Tensor:
    """Piecewise-linear sigmoid approximation clip(0.2*x + 0.5, 0, 1)."""
    a = _as_tensor(a)
    out = np.clip(0.2 * a.data + 0.5, 0.0, 1.0)

    def backward(g):
        inside = (out > 0.0) & (out < 1.0)
        return (g * 0.2 * inside,)

    return _emit("hard_sigmoid", out, (a,), backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def backward(g):
        return (g * (a.data > 0.0),)

    return _emit("relu", out, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _emit("exp", out, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    if (a.data <= 0.0).any():
        raise NumericError("log: non-positive input")
    out = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _emit("log", out, (a,), backward)


def clip(a, lo=None, hi=None) -> Tensor:
    a = _as_tensor(a)
    out = np.clip(a.data, lo, hi)

    def backward(g):
        inside = np.ones_like(out, dtype=bool)
        if lo is not None:
            inside &= a.data > lo
        if hi is not None:
            inside &= a.data < hi
        return (g * inside,)

    return _emit("clip", out, (a,), backward)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    if (a.data < 0.0).any():
        raise NumericError("sqrt: negative input")
    out = np.sqrt(a.data)

    def backward(g):
        return (g * 0.5 / out,)

    return _emit("sqrt", out, (a,), backward)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "hard-sigmoid": hard_sigmoid,
    "relu": relu,
    "exp": exp,
    "log": log,
    "clip": clip,
}


def elementwise(kind: str, a, b=None, **kwargs) -> Tensor:
    """Dispatch an elementwise operation by name (unary kinds ignore ``b``)."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    if kind in ("add", "sub", "mul"):
        if b is None:
            raise ValueError(f"{kind} needs two operands")
        return fn(a, b)
    if b is not None:
        raise ValueError(f"{kind} is unary")
    return fn(a, **kwargs)


# ---------------------------------------------------------------------------
# linear algebra and structural primitives


def dense(x, weights, bias=None) -> Tensor:
    """Affine map over the last axis: y = x @ W + b, W of shape (N, U)."""
    x, weights = _as_tensor(x), _as_tensor(weights)
    if weights.ndim != 2:
        raise ValueError(f"dense weights must be 2-D, got {weights.shape}")
    n_in, n_out = weights.shape
    if x.shape[-1] != n_in:
        raise ValueError(f"dense dimension mismatch: input {x.shape} vs weights {weights.shape}")
    x2 = x.data.reshape(-1, n_in)
    out2 = x2 @ weights.data
    inputs = (x, weights)
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (n_out,):
            raise ValueError(f"dense bias must have shape ({n_out},), got {bias.shape}")
        out2 = out2 + bias.data
        inputs = (x, weights, bias)
    out = out2.reshape(x.shape[:-1] + (n_out,))

    def backward(g):
        g2 = g.reshape(-1, n_out)
        gx = (g2 @ weights.data.T).reshape(x.shape)
        gw = x2.T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _emit("dense", out, inputs, backward)


def _normalize_pad(pad) -> tuple:
    if isinstance(pad, int):
        if pad < 0:
            raise ValueError("pad must be non-negative")
        return (pad, pad), (pad, pad)
    (pt, pb), (pl, pr) = pad
    return (int(pt), int(pb)), (int(pl), int(pr))


def conv2d(x, kernels, bias=None, stride: int = 1, pad=0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``x`` is (H, W, Cin) or (B, H, W, Cin); ``kernels`` is (K, K, Cin, F).
    ``pad`` is a symmetric int or ((top, bottom), (left, right)).
    Output spatial size follows floor((H + pad_total - K) / stride) + 1.
    """
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ValueError(f"conv2d input must be 3-D or 4-D, got shape {x.shape}")
    if kernels.ndim != 4:
        raise ValueError(f"conv2d kernels must be 4-D, got shape {kernels.shape}")
    kh, kw, cin, f = kernels.shape
    if xd.shape[3] != cin:
        raise ValueError(f"conv2d channel mismatch: input {xd.shape[3]} vs kernel {cin}")
    (pt, pb), (pl, pr) = _normalize_pad(pad)
    hp, wp = xd.shape[1] + pt + pb, xd.shape[2] + pl + pr
    if kh > hp or kw > wp:
        raise ValueError("conv2d: kernel larger than padded input")
    xp = np.pad(xd, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]
    batch, ho, wo = windows.shape[:3]
    cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3)).reshape(
        batch * ho * wo, kh * kw * cin
    )
    kmat = kernels.data.reshape(kh * kw * cin, f)
    out2 = cols @ kmat
    inputs = (x, kernels)
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (f,):
            raise ValueError(f"conv2d bias must have shape ({f},), got {bias.shape}")
        out2 = out2 + bias.data
        inputs = (x, kernels, bias)
    out = out2.reshape(batch, ho, wo, f)
    if squeeze:
        out = out[0]

    def backward(g):
        g2 = g.reshape(-1, f)
        gk = (cols.T @ g2).reshape(kernels.shape)
        dcols = (g2 @ kmat.T).reshape(batch, ho, wo, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for a in range(kh):
            for b in range(kw):
                gxp[:, a : a + stride * ho : stride, b : b + stride * wo : stride, :] += dcols[
                    :, :, :, a, b, :
                ]
        gx = gxp[:, pt : hp - pb, pl : wp - pr, :]
        if squeeze:
            gx = gx[0]
        if bias is None:
            return gx, gk
        return gx, gk, g2.sum(axis=0)

    return _emit("conv2d", out, inputs, backward)


def softmax(x) -> Tensor:
    """Softmax over the last axis with max-subtraction for stability."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _emit("softmax", out, (x,), backward)


def _reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    out = np.asarray(out)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy() if np.ndim(g) == 0 else np.full(x.shape, g, dtype=x.data.dtype),)
        g_arr = np.asarray(g)
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for a in sorted(a % x.ndim for a in axes):
                g_arr = np.expand_dims(g_arr, a)
        return (np.broadcast_to(g_arr, x.shape).copy(),)

    return _emit("sum", out, (x,), backward)


def _reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for a in axes:
            count *= x.shape[a % x.ndim]
    return mul(_reduce_sum(x, axis, keepdims), 1.0 / count)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return _emit("reshape", out, (x,), backward)


def stack(tensors: Sequence) -> Tensor:
    """Stack tensors along a new leading axis."""
    ts = tuple(_as_tensor(t) for t in tensors)
    if not ts:
        raise ValueError("stack needs at least one tensor")
    out = np.stack([t.data for t in ts], axis=0)

    def backward(g):
        return tuple(g[i] for i in range(len(ts)))

    return _emit("stack", out, ts, backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    if not ts:
        raise ValueError("concat needs at least one tensor")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit("concat", out, ts, backward)


def index_axis0(x, i: int) -> Tensor:
    """Select one slab along the leading axis."""
    x = _as_tensor(x)
    out = x.data[i]

    def backward(g):
        gx = np.zeros(x.shape, dtype=x.data.dtype)
        gx[i] = g
        return (gx,)

    return _emit("index_axis0", out, (x,), backward)


def crop2d(x, height: int, width: int) -> Tensor:
    """Keep the top-left height x width window of the two spatial axes."""
    x = _as_tensor(x)
    if x.ndim == 3:
        out = x.data[:height, :width, :]
    elif x.ndim == 4:
        out = x.data[:, :height, :width, :]
    else:
        raise ValueError(f"crop2d expects a 3-D or 4-D tensor, got shape {x.shape}")

    def backward(g):
        gx = np.zeros(x.shape, dtype=x.data.dtype)
        if x.ndim == 3:
            gx[:height, :width, :] = g
        else:
            gx[:, :height, :width, :] = g
        return (gx,)

    return _emit("crop2d", out, (x,), backward)
