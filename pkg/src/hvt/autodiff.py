"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation returns a new :class:`Tensor`. When any input requires a
gradient, the result records its parents and a backward closure; calling
:func:`backward` on a scalar walks the recorded graph once in reverse
topological order and accumulates gradients additively.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

_state = {"grad": True}


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation, optimizer math)."""
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def grad_enabled() -> bool:
    return _state["grad"]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_owned")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = _contig(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = None
        self._owned = False

    @property
    def shape(self) -> tuple:
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
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None
        self._owned = False

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _contig(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr if arr.flags.c_contiguous else arr.copy(order="C")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, op: str, parents: tuple, backward: Callable) -> Tensor:
    if np.isnan(data).any():
        raise NumericError(op)
    out = Tensor(data)
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out._op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op: str, *arrays: np.ndarray) -> None:
    try:
        np.broadcast_shapes(*(a.shape for a in arrays))
    except ValueError as exc:
        shapes = ", ".join(str(a.shape) for a in arrays)
        raise ShapeError(f"{op}: shapes {shapes} are not broadcast-compatible") from exc


class _SliceGrad:
    """Gradient for a sub-region of a parent; accumulated without a dense copy."""

    __slots__ = ("index", "value")

    def __init__(self, index, value):
        self.index = index
        self.value = value


def _accumulate(t: Tensor, g) -> None:
    if isinstance(g, _SliceGrad):
        if t.grad is None:
            t.grad = np.zeros(t.shape)
        elif not t._owned:
            t.grad = t.grad.copy()
        t._owned = True
        if _needs_add_at(g.index):
            np.add.at(t.grad, g.index, g.value)
        else:
            t.grad[g.index] += g.value
        return
    g = _unbroadcast(np.asarray(g, dtype=np.float64), t.shape)
    if t.grad is None:
        t.grad = g
        t._owned = False
    else:
        t.grad = t.grad + g
        t._owned = True


def _needs_add_at(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _toposort(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(t) into ``t.grad`` for every ancestor requiring grad."""
    if root.shape != ():
        raise ShapeError(f"backward() needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _toposort(root)
    _accumulate(root, np.ones(()))
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is not None and parent.requires_grad:
                _accumulate(parent, g)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.data, b.data)
    return _result(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.data, b.data)
    return _result(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.data, b.data)
    ad, bd = a.data, b.data

    def _bw(g):
        return (g * bd if a.requires_grad else None, g * ad if b.requires_grad else None)

    return _result(ad * bd, "mul", (a, b), _bw)


def div(a, b, eps: float = 0.0) -> Tensor:
    """a / (b + eps); pass ``eps`` for stabilized division."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a.data, b.data)
    ad = a.data
    bd = b.data + eps if eps else b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd

    def _bw(g):
        gb = g / bd
        return gb, (-gb * out if b.requires_grad else None)

    return _result(out, "div", (a, b), _bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, "neg", (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    if p == 2:
        return _result(ad * ad, "pow", (a,), lambda g: (2.0 * g * ad,))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad ** p
    return _result(out, "pow", (a,), lambda g: (g * p * ad ** (p - 1),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def artanh(a, delta: float = 1e-7) -> Tensor:
    """Inverse tanh with the input hard-clamped to [-1+delta, 1-delta].

    The derivative is evaluated at the clamped value and passed straight
    through, so saturated entries still receive a (large, finite) gradient.
    """
    a = as_tensor(a)
    xc = np.clip(a.data, -1.0 + delta, 1.0 - delta)
    out = np.arctanh(xc)
    return _result(out, "artanh", (a,), lambda g: (g / (1.0 - xc * xc),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, "exp", (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _result(out, "log", (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    with np.errstate(divide="ignore"):
        return _result(out, "sqrt", (a,), lambda g: (g * 0.5 / out,))


def clamp_min(a, lo: float) -> Tensor:
    a = as_tensor(a)
    keep = a.data >= lo
    return _result(np.where(keep, a.data, lo), "clamp_min", (a,), lambda g: (g * keep,))


def clamp_max(a, hi: float) -> Tensor:
    a = as_tensor(a)
    keep = a.data <= hi
    return _result(np.where(keep, a.data, hi), "clamp_max", (a,), lambda g: (g * keep,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    keep = a.data > 0
    return _result(np.where(keep, a.data, 0.0), "relu", (a,), lambda g: (g * keep,))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    out = np.logaddexp(0.0, ad)
    sig = 0.5 * (1.0 + np.tanh(0.5 * ad))
    return _result(out, "softplus", (a,), lambda g: (g * sig,))


def inverse_softplus(y: float) -> float:
    """Raw value whose softplus is ``y`` (plain float helper for initialization)."""
    return float(y + np.log(-np.expm1(-y)))


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg,
    "tanh": tanh, "artanh": artanh, "exp": exp, "log": log, "sqrt": sqrt,
    "clamp_min": clamp_min, "clamp_max": clamp_max, "relu": relu,
    "softplus": softplus,
}


def elementwise(op: str, *inputs, **kwargs) -> Tensor:
    """Dispatch an elementwise primitive by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op '{op}'") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# linear algebra and reductions
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul batch dims incompatible: {a.shape} @ {b.shape}") from exc
    ad, bd = a.data, b.data
    out = ad @ bd

    def _bw(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _result(out, "matmul", (a, b), _bw)


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    axes = axis if isinstance(axis, tuple) else (axis,)
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
    return tuple(ax % ndim for ax in axes)


def _expand_like(g, shape, axes, keepdims):
    if axes is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = np.sum(a.data, axis=axes, keepdims=keepdims)
    shape = a.shape
    return _result(out, "sum", (a,), lambda g: (_expand_like(g, shape, axes, keepdims),))


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = np.mean(a.data, axis=axes, keepdims=keepdims)
    shape = a.shape
    count = a.size / max(out.size, 1)
    return _result(out, "mean", (a,), lambda g: (_expand_like(g / count, shape, axes, keepdims),))


def reduce_max(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = np.max(a.data, axis=axes, keepdims=keepdims)
    full = np.max(a.data, axis=axes, keepdims=True)
    mask = a.data == full
    mask = mask / mask.sum(axis=axes, keepdims=True)
    shape = a.shape
    return _result(out, "max", (a,), lambda g: (_expand_like(g, shape, axes, keepdims) * mask,))


def norm2(a, axis=-1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at the origin is taken as 0."""
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    ad = a.data
    full = np.sqrt(np.sum(ad * ad, axis=axes, keepdims=True))
    out = full if keepdims else np.squeeze(full, axis=axes)
    shape = a.shape

    def _bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(full > 0, ad / full, 0.0)
        return (_expand_like(g, shape, axes, keepdims) * unit,)

    return _result(out, "norm2", (a,), _bw)


_REDUCE = {"sum": reduce_sum, "mean": reduce_mean, "max": reduce_max, "norm2": norm2}


def reduce(op: str, x, axis=-1, keepdims: bool = False) -> Tensor:
    try:
        fn = _REDUCE[op]
    except KeyError:
        raise ValueError(f"unknown reduction '{op}'") from None
    return fn(x, axis, keepdims)


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    z = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def _bw(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _result(out, "softmax", (a,), _bw)


def log_softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    z = a.data - np.max(a.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def _bw(g):
        return (g - sm * np.sum(g, axis=axis, keepdims=True),)

    return _result(out, "log_softmax", (a,), _bw)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}") from exc
    old = a.shape
    return _result(out, "reshape", (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    out = _contig(np.transpose(a.data, axes))
    return _result(out, "transpose", (a,), lambda g: (np.transpose(g, inv),))


def transpose_last2(a) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = _contig(a.data[index])
    return _result(out, "getitem", (a,), lambda g: (_SliceGrad(index, g),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in ts]} along axis {axis}") from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def _bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, "concat", tuple(ts), _bw)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = _contig(np.broadcast_to(a.data, shape))
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} to {tuple(shape)}") from exc
    return _result(out, "broadcast_to", (a,), lambda g: (g,))


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def finite_diff_grad(f: Callable[[Tensor], Tensor], x, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``, one coordinate at a time."""
    base = np.array(as_tensor(x).data, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(f(Tensor(base)))
            flat[i] = orig - h
            fm = _scalar(f(Tensor(base)))
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def _scalar(v) -> float:
    return float(v.data) if isinstance(v, Tensor) else float(v)


def analytic_grad(f: Callable[[Tensor], Tensor], x) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` via :func:`backward`."""
    t = Tensor(np.array(as_tensor(x).data), requires_grad=True)
    out = f(t)
    backward(out)
    return np.zeros(t.shape) if t.grad is None else np.array(t.grad)


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1, |n|), the tolerance metric used by all gradient checks."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(n))))
