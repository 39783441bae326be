"""Reverse-mode autodiff over dense row-major numpy arrays.

A :class:`Tensor` wraps an ndarray plus an optional gradient. Operations
build an implicit acyclic graph: each result remembers its parent tensors
and a closure that routes the incoming gradient to them. ``backward`` on a
scalar loss walks the graph once in reverse topological order, accumulating
additively into every ``requires_grad`` tensor it reaches.

Storage is float32 by default; float64 graphs are supported throughout and
are what :mod:`viewfuse.gradcheck` uses. Results never silently promote:
python scalars adopt the tensor operand's dtype.

NaN/Inf detection is an opt-in debug mode (:func:`set_nan_checks`); when
enabled every primitive's output is scanned and a :class:`NonFiniteError`
identifies the producing op.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteError(ArithmeticError):
    """A primitive produced NaN or Inf while debug scanning was enabled."""


_nan_checks = False


def set_nan_checks(enabled: bool) -> None:
    global _nan_checks
    _nan_checks = bool(enabled)


def nan_checks_enabled() -> bool:
    return _nan_checks


_FLOAT_DTYPES = (np.float32, np.float64)


def _as_array(data, dtype=None) -> np.ndarray:
    if dtype is not None:
        arr = np.asarray(data, dtype=dtype)
    else:
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
    return np.ascontiguousarray(arr)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._op = "leaf"

    # -- introspection ------------------------------------------------

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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self._op}{flag})"

    # -- graph plumbing -----------------------------------------------

    def _init_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def backward(self) -> None:
        backward(self)

    # -- operator sugar -----------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_const_like(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_const_like(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _raise_scalar(t: Tensor):
    raise ShapeError(f"expected a single-element tensor, got shape {t.shape}")


def _const_like(value, ref: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=ref.data.dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if _nan_checks and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    out._op = op
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    t._init_grad()
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor, leaves: Iterable[Tensor] | None = None) -> None:
    """Run reverse accumulation from a scalar loss.

    Every ``requires_grad`` tensor reachable from ``loss`` receives its
    gradient (added to any existing one). Tensors in ``leaves`` that the
    graph never touched get explicit zero gradients, so optimizers can rely
    on a gradient being present for every trainable parameter.
    """
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not require grad; nothing to differentiate")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss._init_grad()
    loss.grad += np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)

    if leaves is not None:
        for leaf in leaves:
            if leaf.requires_grad and leaf.grad is None:
                leaf._init_grad()


# ---------------------------------------------------------------------------
# arithmetic primitives


def add(a: Tensor, b) -> Tensor:
    b = _const_like(b, a)
    data = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), bwd, "add")


def sub(a: Tensor, b) -> Tensor:
    b = _const_like(b, a)
    data = a.data - b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(data, (a, b), bwd, "sub")


def mul(a: Tensor, b) -> Tensor:
    b = _const_like(b, a)
    data = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), bwd, "mul")


def div(a: Tensor, b) -> Tensor:
    b = _const_like(b, a)
    data = a.data / b.data

    def bwd(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * data / b.data, b.shape))

    return _make(data, (a, b), bwd, "div")


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bwd, "neg")


def texp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bwd(g):
        _accum(a, g * data)

    return _make(data, (a,), bwd, "exp")


def tlog(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def bwd(g):
        _accum(a, g / a.data)

    return _make(data, (a,), bwd, "log")


def tsqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def bwd(g):
        _accum(a, g * (0.5 / data))

    return _make(data, (a,), bwd, "sqrt")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bwd(g):
        _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(data, (a, b), bwd, "matmul")


# ---------------------------------------------------------------------------
# structural primitives


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    data = a.data.reshape(shape)

    def bwd(g):
        _accum(a, g.reshape(a.shape))

    return _make(data, (a,), bwd, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(int(x) for x in axes)
    data = np.ascontiguousarray(np.transpose(a.data, axes))
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _accum(a, np.transpose(g, inv))

    return _make(data, (a,), bwd, "transpose")


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    data = np.ascontiguousarray(np.broadcast_to(a.data, shape))

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))

    return _make(data, (a,), bwd, "broadcast_to")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat of an empty sequence")
    first = tensors[0]
    for t in tensors[1:]:
        if t.ndim != first.ndim:
            raise ShapeError(f"concat rank mismatch: {first.shape} vs {t.shape}")
        for ax in range(first.ndim):
            if ax != axis % first.ndim and t.shape[ax] != first.shape[ax]:
                raise ShapeError(f"concat shapes disagree off-axis: {first.shape} vs {t.shape}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(lo), int(hi))
            _accum(t, g[tuple(idx)])

    return _make(data, tuple(tensors), bwd, "concat")


def getitem(a: Tensor, idx) -> Tensor:
    data = a.data[idx]
    if np.isscalar(data) or data.ndim == 0:
        data = np.asarray(data)

    def bwd(g):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _make(np.ascontiguousarray(data), (a,), bwd, "getitem")


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    indices = np.asarray(indices)
    if not np.issubdtype(indices.dtype, np.integer):
        raise TypeError("take expects integer indices")
    if indices.size and (indices.min() < 0 or indices.max() >= a.shape[axis]):
        raise IndexError(f"take indices out of range for axis {axis} of shape {a.shape}")
    data = np.take(a.data, indices, axis=axis)

    def bwd(g):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        sel: list = [slice(None)] * a.ndim
        sel[axis] = indices
        np.add.at(full, tuple(sel), g)
        _accum(a, full)

    return _make(data, (a,), bwd, "take")


# ---------------------------------------------------------------------------
# reductions


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def bwd(g):
        gx = g
        if not keepdims:
            gx = np.expand_dims(gx, axes)
        _accum(a, np.broadcast_to(gx, a.shape))

    return _make(np.asarray(data), (a,), bwd, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    data = a.data.mean(axis=axes, keepdims=keepdims)

    def bwd(g):
        gx = g
        if not keepdims:
            gx = np.expand_dims(gx, axes)
        _accum(a, np.broadcast_to(gx, a.shape) / np.asarray(count, dtype=a.data.dtype))

    return _make(np.asarray(data), (a,), bwd, "mean")


# ---------------------------------------------------------------------------
# neural primitives backed by the kernel layer


def _rows2d(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


def gelu(a: Tensor) -> Tensor:
    data = kernels.gelu_fwd(a.data)

    def bwd(g):
        _accum(a, kernels.gelu_bwd(a.data, g))

    return _make(data, (a,), bwd, "gelu")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if axis % a.ndim != a.ndim - 1:
        raise ValueError("softmax is defined over the last axis; transpose first")
    x2 = _rows2d(a.data)
    y2 = kernels.softmax_fwd(x2)
    data = y2.reshape(a.shape)

    def bwd(g):
        g2 = _rows2d(g)
        _accum(a, kernels.softmax_bwd(y2, g2).reshape(a.shape))

    return _make(data, (a,), bwd, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    if axis % a.ndim != a.ndim - 1:
        raise ValueError("log_softmax is defined over the last axis; transpose first")
    x64 = a.data.astype(np.float64, copy=False)
    shifted = x64 - x64.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out64 = shifted - lse
    data = out64.astype(a.data.dtype, copy=False)
    soft = np.exp(out64).astype(a.data.dtype, copy=False)

    def bwd(g):
        _accum(a, g - soft * g.sum(axis=-1, keepdims=True))

    return _make(np.ascontiguousarray(data), (a,), bwd, "log_softmax")


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    dim = a.shape[-1]
    if gamma.shape != (dim,) or beta.shape != (dim,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match feature dim ({dim},)"
        )
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    x2 = _rows2d(a.data)
    y2, mean, rstd = kernels.layer_norm_fwd(x2, gamma.data, beta.data, eps)
    data = y2.reshape(a.shape)

    def bwd(g):
        g2 = _rows2d(g)
        if a.requires_grad:
            dx = kernels.layer_norm_bwd(x2, g2, gamma.data, mean, rstd)
            _accum(a, dx.reshape(a.shape))
        if gamma.requires_grad or beta.requires_grad:
            xhat = (x2.astype(np.float64, copy=False) - mean[:, None]) * rstd[:, None]
            g64 = g2.astype(np.float64, copy=False)
            _accum(gamma, (g64 * xhat).sum(axis=0).astype(gamma.data.dtype))
            _accum(beta, g64.sum(axis=0).astype(beta.data.dtype))

    return _make(data, (a, gamma, beta), bwd, "layer_norm")
