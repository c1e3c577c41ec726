"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable op records its inputs and a backward closure on the
output tensor. Tensors carry a monotonically increasing creation id, so the
recorded graph is a DAG in creation order and ``backward`` replays it in
strict reverse creation order.
"""

from __future__ import annotations

import contextlib
import contextvars
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError

_ids = itertools.count()
_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)
_check_finite: contextvars.ContextVar[bool] = contextvars.ContextVar("check_finite", default=False)


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN or Inf while finiteness checking was on."""


@contextlib.contextmanager
def no_grad():
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


@contextlib.contextmanager
def detect_nonfinite():
    """Raise NonFiniteError as soon as any op output contains NaN/Inf."""
    token = _check_finite.set(True)
    try:
        yield
    finally:
        _check_finite.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_id", "_op", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=np.float64)  # always a private copy
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._id = next(_ids)
        self._op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def op(self) -> str:
        return self._op

    @property
    def parents(self) -> tuple["Tensor", ...]:
        return self._parents

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- autodiff ---------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf.

        ``self`` must be a scalar unless an explicit upstream ``grad`` is given.
        Gradients add onto whatever is already stored; call ``zero_grad``
        between steps.
        """
        if grad is None:
            if self.data.size != 1:
                raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.shape:
                raise ShapeError(f"upstream grad shape {grad.shape} != tensor shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() called on a tensor that does not require grad")

        nodes = _reachable(self)
        nodes.sort(key=lambda t: t._id, reverse=True)
        grads: dict[int, np.ndarray] = {self._id: grad}
        for node in nodes:
            g = grads.pop(node._id, None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(parent._id)
                grads[parent._id] = pg if prev is None else prev + pg

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def max(self, axis=-1, keepdims=False): return max_(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    def transpose(self, *axes): return transpose(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else (axes or None))


def _reachable(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    out: list[Tensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if t._id in seen or not t.requires_grad:
            continue
        seen.add(t._id)
        out.append(t)
        stack.extend(t._parents)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = ""
    out._id = next(_ids)
    out._op = op
    if _check_finite.get() and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")
    track = _grad_enabled.get() and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shapes(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise binary ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "add")
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "sub")
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "mul")
    return _make(a.data * b.data, "mul", (a, b),
                 lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "div")
    out = a.data / b.data
    return _make(out, "div", (a, b),
                 lambda g: (unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


# -- elementwise unary ----------------------------------------------------

def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    return expit(x)


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid_np(x.data)
    return _make(y, "sigmoid", (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, "tanh", (x,), lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), "relu", (x,), lambda g: (g * mask,))


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, "square", (x,), lambda g: (2.0 * g * x.data,))


def abs_(x: Tensor) -> Tensor:
    return _make(np.abs(x.data), "abs", (x,), lambda g: (g * np.sign(x.data),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, "exp", (x,), lambda g: (g * y,))


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    return _make(y, "sqrt", (x,), lambda g: (g * 0.5 / y,))


# -- reductions -----------------------------------------------------------

def _norm_axis(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(sorted(out))


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axes: tuple[int, ...], keepdims: bool) -> np.ndarray:
    if not keepdims:
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)
    return _make(np.asarray(out, dtype=np.float64), "sum", (x,),
                 lambda g: (_expand_reduced(g, x.shape, axes, keepdims).copy(),))


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise ShapeError(f"mean over empty axis of shape {x.shape}")
    out = x.data.mean(axis=axes, keepdims=keepdims)
    return _make(np.asarray(out, dtype=np.float64), "mean", (x,),
                 lambda g: (_expand_reduced(g, x.shape, axes, keepdims) / count,))


def max_(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Max along one axis; the gradient goes to the first maximal index."""
    ax = _norm_axis(axis, x.ndim)[0]
    if x.shape[ax] == 0:
        raise ShapeError(f"max over empty axis of shape {x.shape}")
    idx = np.expand_dims(np.argmax(x.data, axis=ax), ax)
    out = np.take_along_axis(x.data, idx, axis=ax)

    def backward(g):
        gk = g if keepdims else np.expand_dims(g, ax)
        full = np.zeros(x.shape)
        np.put_along_axis(full, idx, gk, axis=ax)
        return (full,)

    return _make(out if keepdims else np.squeeze(out, ax), "max", (x,), backward)


# -- linear algebra -------------------------------------------------------

def _left_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """2-d ``a`` times every (.., k, n) matrix of ``b`` as one BLAS call."""
    return np.moveaxis(np.tensordot(a, b, axes=([1], [b.ndim - 2])), 0, -2)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batch axes broadcast; a 1-d left operand is a row vector."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 1 and b.ndim == 2:
        # vector-matrix product as a one-row matrix
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), (b.shape[1],))
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    k = a.shape[-1]
    if b.ndim == 2:
        out = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (b.shape[1],))
    elif a.ndim == 2:
        out = _left_matmul(a.data, b.data)
    else:
        try:
            out = np.matmul(a.data, b.data)
        except ValueError:
            raise ShapeError(f"matmul: batch dimensions incompatible, {a.shape} @ {b.shape}") from None

    def backward(g):
        ga = gb = None
        if b.ndim == 2:
            n = b.shape[1]
            g2 = g.reshape(-1, n)
            if a.requires_grad:
                ga = (g2 @ b.data.T).reshape(a.shape)
            if b.requires_grad:
                gb = a.data.reshape(-1, k).T @ g2
        elif a.ndim == 2:
            if a.requires_grad:
                ga = np.tensordot(g, b.data, axes=(
                    [i for i in range(g.ndim) if i != g.ndim - 2], [i for i in range(b.ndim) if i != b.ndim - 2]))
            if b.requires_grad:
                gb = _left_matmul(a.data.T, g)
        else:
            if a.requires_grad:
                ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
            if b.requires_grad:
                gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, "matmul", (a, b), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.ndim == 0 or x.shape[axis] == 0:
        raise ShapeError(f"softmax over empty axis of shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, "softmax", (x,),
                 lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, unbroadcast(g * xhat, gamma.shape), unbroadcast(g, beta.shape)

    return _make(xhat * gamma.data + beta.data, "layer_norm", (x, gamma, beta), backward)


# -- shape ops ------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from None
    return _make(out, "reshape", (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(np.transpose(x.data, axes)), "transpose", (x,),
                 lambda g: (np.transpose(g, inv),))


def getitem(x: Tensor, idx) -> Tensor:
    out = np.array(x.data[idx], dtype=np.float64)

    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros(x.shape)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(out, "getitem", (x,), backward)


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1:] != tensors[0].shape[:ax] + tensors[0].shape[ax + 1:]:
            raise ShapeError(f"concat along axis {axis}: incompatible shapes {[t.shape for t in tensors]}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors)))

    return _make(out, "concat", tuple(tensors), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim
    return _make(out, "stack", tuple(tensors),
                 lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(tensors))))


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"cannot broadcast {x.shape} to {shape}") from None
    return _make(out, "broadcast", (x,), lambda g: (unbroadcast(g, x.shape),))


# -- structured ops -------------------------------------------------------

def conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None, dilation: int = 1) -> Tensor:
    """Causal dilated convolution over time.

    x: (B, T, C_in); w: (k, C_in, C_out). Output y[:, t] only sees inputs at
    t, t-d, ..., t-(k-1)d (left zero padding), so T is preserved.
    """
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise ShapeError(f"conv1d: x {x.shape} incompatible with kernel {w.shape}")
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    B, T, C = x.shape
    k, _, C_out = w.shape
    pad = (k - 1) * dilation
    xp = np.concatenate([np.zeros((B, pad, C)), x.data], axis=1)
    cols = np.concatenate([xp[:, j * dilation:j * dilation + T] for j in range(k)], axis=2)
    wmat = w.data.reshape(k * C, C_out)
    out = (cols.reshape(-1, k * C) @ wmat).reshape(B, T, C_out)
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gw = (cols.reshape(-1, k * C).T @ g.reshape(-1, C_out)).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g.reshape(-1, C_out) @ wmat.T).reshape(B, T, k * C)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j * dilation:j * dilation + T] += gcols[:, :, j * C:(j + 1) * C]
            gx = gxp[:, pad:]
        gb = g.reshape(-1, C_out).sum(axis=0) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, w, bias) if bias is not None else (x, w)
    return _make(out, "conv1d", parents, backward)


def embedding(table: Tensor, index) -> Tensor:
    """Row lookup ``table[index]`` for an int or an int array."""
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError(f"embedding index must be integer, got {idx.dtype}")
    V = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= V):
        raise IndexError(f"embedding index out of range [0, {V}): {idx.tolist()}")
    out = table.data[idx].copy()

    def backward(g):
        full = np.zeros(table.shape)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out, "embedding", (table,), backward)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape))


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(p.is_finite() for p in params)
