"""Hot numeric kernels with numba and pure-numpy implementations.

Each kernel exists twice: a loop form compiled with ``@njit(cache=True)``
and a vectorized numpy form. :func:`set_backend` swaps the active set at
runtime; the default comes from :func:`viewfuse.backend.default_backend`.
Callers must go through the module-level wrappers (``kernels.gelu_fwd`` etc.)
so the swap takes effect everywhere at once.

Numeric contracts the two paths share:

* gelu is the exact Gaussian-CDF form ``0.5 * x * (1 + erf(x / sqrt(2)))``.
* layer norm statistics and softmax accumulate in float64 regardless of
  input dtype, so float32 results agree between paths to ~1 ulp.
* ``avg_pool5`` works in integer arithmetic (half-up rounding via
  ``(2 * sum + count) // (2 * count)``), so both paths are bit-identical.
* ``bilinear_resize`` uses half-pixel centers with edge clamping; resizing
  to the same size is the identity.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf as _scipy_erf

from .backend import HAS_NUMBA, default_backend, njit

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# numpy implementations


def _np_gelu_fwd(x):
    x64 = x.astype(np.float64, copy=False)
    out = 0.5 * x64 * (1.0 + _scipy_erf(x64 * _INV_SQRT2))
    return out.astype(x.dtype, copy=False)


def _np_gelu_bwd(x, g):
    x64 = x.astype(np.float64, copy=False)
    phi = 0.5 * (1.0 + _scipy_erf(x64 * _INV_SQRT2))
    dens = np.exp(-0.5 * x64 * x64) * _INV_SQRT_2PI
    out = g.astype(np.float64, copy=False) * (phi + x64 * dens)
    return out.astype(x.dtype, copy=False)


def _np_layer_norm_fwd(x, gamma, beta, eps):
    x64 = x.astype(np.float64, copy=False)
    mean = x64.mean(axis=1)
    var = np.square(x64 - mean[:, None]).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x64 - mean[:, None]) * rstd[:, None]
    out = xhat * gamma.astype(np.float64, copy=False) + beta.astype(np.float64, copy=False)
    return out.astype(x.dtype, copy=False), mean, rstd


def _np_layer_norm_bwd(x, g, gamma, mean, rstd):
    x64 = x.astype(np.float64, copy=False)
    g64 = g.astype(np.float64, copy=False)
    xhat = (x64 - mean[:, None]) * rstd[:, None]
    dxhat = g64 * gamma.astype(np.float64, copy=False)
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    return dx.astype(x.dtype, copy=False)


def _np_softmax_fwd(x):
    x64 = x.astype(np.float64, copy=False)
    shifted = x64 - x64.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    return out.astype(x.dtype, copy=False)


def _np_softmax_bwd(y, g):
    y64 = y.astype(np.float64, copy=False)
    g64 = g.astype(np.float64, copy=False)
    inner = (g64 * y64).sum(axis=1, keepdims=True)
    return (y64 * (g64 - inner)).astype(y.dtype, copy=False)


def _np_avg_pool5(img):
    h, w = img.shape
    oh = -(-h // 5)
    ow = -(-w // 5)
    s = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(img, axis=0, dtype=np.int64, out=s[1:, 1:])
    np.cumsum(s[1:, 1:], axis=1, out=s[1:, 1:])
    r0 = np.arange(oh) * 5
    r1 = np.minimum(r0 + 5, h)
    c0 = np.arange(ow) * 5
    c1 = np.minimum(c0 + 5, w)
    sums = s[r1[:, None], c1[None, :]] - s[r0[:, None], c1[None, :]] \
        - s[r1[:, None], c0[None, :]] + s[r0[:, None], c0[None, :]]
    counts = (r1 - r0)[:, None] * (c1 - c0)[None, :]
    return (2 * sums + counts) // (2 * counts)


def _np_bilinear_resize(img, oh, ow):
    h, w = img.shape
    img64 = img.astype(np.float64, copy=False)
    fy = (np.arange(oh) + 0.5) * (h / oh) - 0.5
    fx = (np.arange(ow) + 0.5) * (w / ow) - 0.5
    fy = np.clip(fy, 0.0, h - 1.0)
    fx = np.clip(fx, 0.0, w - 1.0)
    y0 = np.floor(fy).astype(np.int64)
    x0 = np.floor(fx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (fy - y0)[:, None]
    wx = (fx - x0)[None, :]
    top = (1.0 - wx) * img64[y0[:, None], x0[None, :]] + wx * img64[y0[:, None], x1[None, :]]
    bot = (1.0 - wx) * img64[y1[:, None], x0[None, :]] + wx * img64[y1[:, None], x1[None, :]]
    out = (1.0 - wy) * top + wy * bot
    return out.astype(img.dtype, copy=False)


# ---------------------------------------------------------------------------
# numba implementations (loop forms of the same contracts)


@njit(cache=True)
def _nb_gelu_fwd(x, out):
    for i in range(x.size):
        v = x[i]
        out[i] = 0.5 * v * (1.0 + math.erf(v * _INV_SQRT2))


@njit(cache=True)
def _nb_gelu_bwd(x, g, out):
    for i in range(x.size):
        v = x[i]
        phi = 0.5 * (1.0 + math.erf(v * _INV_SQRT2))
        dens = math.exp(-0.5 * v * v) * _INV_SQRT_2PI
        out[i] = g[i] * (phi + v * dens)


@njit(cache=True)
def _nb_layer_norm_fwd(x, gamma, beta, eps, out, mean, rstd):
    rows, dim = x.shape
    for r in range(rows):
        s = 0.0
        for d in range(dim):
            s += x[r, d]
        m = s / dim
        ss = 0.0
        for d in range(dim):
            dv = x[r, d] - m
            ss += dv * dv
        rs = 1.0 / math.sqrt(ss / dim + eps)
        mean[r] = m
        rstd[r] = rs
        for d in range(dim):
            out[r, d] = (x[r, d] - m) * rs * gamma[d] + beta[d]


@njit(cache=True)
def _nb_layer_norm_bwd(x, g, gamma, mean, rstd, dx):
    rows, dim = x.shape
    for r in range(rows):
        m = mean[r]
        rs = rstd[r]
        s1 = 0.0
        s2 = 0.0
        for d in range(dim):
            xh = (x[r, d] - m) * rs
            dxh = g[r, d] * gamma[d]
            s1 += dxh
            s2 += dxh * xh
        s1 /= dim
        s2 /= dim
        for d in range(dim):
            xh = (x[r, d] - m) * rs
            dxh = g[r, d] * gamma[d]
            dx[r, d] = rs * (dxh - s1 - xh * s2)


@njit(cache=True)
def _nb_softmax_fwd(x, out):
    rows, dim = x.shape
    for r in range(rows):
        mx = x[r, 0]
        for d in range(1, dim):
            if x[r, d] > mx:
                mx = x[r, d]
        s = 0.0
        for d in range(dim):
            e = math.exp(x[r, d] - mx)
            out[r, d] = e
            s += e
        inv = 1.0 / s
        for d in range(dim):
            out[r, d] = out[r, d] * inv


@njit(cache=True)
def _nb_softmax_bwd(y, g, dx):
    rows, dim = y.shape
    for r in range(rows):
        inner = 0.0
        for d in range(dim):
            inner += g[r, d] * y[r, d]
        for d in range(dim):
            dx[r, d] = y[r, d] * (g[r, d] - inner)


@njit(cache=True)
def _nb_avg_pool5(img, out):
    h, w = img.shape
    oh, ow = out.shape
    for i in range(oh):
        r0 = i * 5
        r1 = min(r0 + 5, h)
        for j in range(ow):
            c0 = j * 5
            c1 = min(c0 + 5, w)
            s = 0
            for r in range(r0, r1):
                for c in range(c0, c1):
                    s += img[r, c]
            cnt = (r1 - r0) * (c1 - c0)
            out[i, j] = (2 * s + cnt) // (2 * cnt)


@njit(cache=True)
def _nb_bilinear_resize(img, out):
    h, w = img.shape
    oh, ow = out.shape
    sy = h / oh
    sx = w / ow
    for i in range(oh):
        fy = (i + 0.5) * sy - 0.5
        if fy < 0.0:
            fy = 0.0
        if fy > h - 1.0:
            fy = h - 1.0
        y0 = int(math.floor(fy))
        y1 = min(y0 + 1, h - 1)
        wy = fy - y0
        for j in range(ow):
            fx = (j + 0.5) * sx - 0.5
            if fx < 0.0:
                fx = 0.0
            if fx > w - 1.0:
                fx = w - 1.0
            x0 = int(math.floor(fx))
            x1 = min(x0 + 1, w - 1)
            wx = fx - x0
            top = (1.0 - wx) * img[y0, x0] + wx * img[y0, x1]
            bot = (1.0 - wx) * img[y1, x0] + wx * img[y1, x1]
            out[i, j] = (1.0 - wy) * top + wy * bot


# ---------------------------------------------------------------------------
# numba wrappers allocating outputs and normalizing layouts


def _nbw_gelu_fwd(x):
    flat = np.ascontiguousarray(x).reshape(-1)
    out = np.empty_like(flat)
    _nb_gelu_fwd(flat, out)
    return out.reshape(x.shape)


def _nbw_gelu_bwd(x, g):
    flat = np.ascontiguousarray(x).reshape(-1)
    gflat = np.ascontiguousarray(g, dtype=x.dtype).reshape(-1)
    out = np.empty_like(flat)
    _nb_gelu_bwd(flat, gflat, out)
    return out.reshape(x.shape)


def _nbw_layer_norm_fwd(x, gamma, beta, eps):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    mean = np.empty(x.shape[0], dtype=np.float64)
    rstd = np.empty(x.shape[0], dtype=np.float64)
    _nb_layer_norm_fwd(x, gamma, beta, float(eps), out, mean, rstd)
    return out, mean, rstd


def _nbw_layer_norm_bwd(x, g, gamma, mean, rstd):
    x = np.ascontiguousarray(x)
    g = np.ascontiguousarray(g, dtype=x.dtype)
    dx = np.empty_like(x)
    _nb_layer_norm_bwd(x, g, gamma, mean, rstd, dx)
    return dx


def _nbw_softmax_fwd(x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    _nb_softmax_fwd(x, out)
    return out


def _nbw_softmax_bwd(y, g):
    y = np.ascontiguousarray(y)
    g = np.ascontiguousarray(g, dtype=y.dtype)
    dx = np.empty_like(y)
    _nb_softmax_bwd(y, g, dx)
    return dx


def _nbw_avg_pool5(img):
    img = np.ascontiguousarray(img, dtype=np.int64)
    oh = -(-img.shape[0] // 5)
    ow = -(-img.shape[1] // 5)
    out = np.empty((oh, ow), dtype=np.int64)
    _nb_avg_pool5(img, out)
    return out


def _nbw_bilinear_resize(img, oh, ow):
    img = np.ascontiguousarray(img)
    out = np.empty((oh, ow), dtype=img.dtype)
    _nb_bilinear_resize(img, out)
    return out


_IMPLS = {
    "numpy": {
        "gelu_fwd": _np_gelu_fwd,
        "gelu_bwd": _np_gelu_bwd,
        "layer_norm_fwd": _np_layer_norm_fwd,
        "layer_norm_bwd": _np_layer_norm_bwd,
        "softmax_fwd": _np_softmax_fwd,
        "softmax_bwd": _np_softmax_bwd,
        "avg_pool5": _np_avg_pool5,
        "bilinear_resize": _np_bilinear_resize,
    },
    "numba": {
        "gelu_fwd": _nbw_gelu_fwd,
        "gelu_bwd": _nbw_gelu_bwd,
        "layer_norm_fwd": _nbw_layer_norm_fwd,
        "layer_norm_bwd": _nbw_layer_norm_bwd,
        "softmax_fwd": _nbw_softmax_fwd,
        "softmax_bwd": _nbw_softmax_bwd,
        "avg_pool5": _nbw_avg_pool5,
        "bilinear_resize": _nbw_bilinear_resize,
    },
}

_backend = "numpy"


def set_backend(name: str) -> None:
    """Activate a kernel backend, 'numpy' or 'numba'."""
    if name not in _IMPLS:
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    global _backend, gelu_fwd, gelu_bwd, layer_norm_fwd, layer_norm_bwd
    global softmax_fwd, softmax_bwd, avg_pool5, bilinear_resize
    impl = _IMPLS[name]
    gelu_fwd = impl["gelu_fwd"]
    gelu_bwd = impl["gelu_bwd"]
    layer_norm_fwd = impl["layer_norm_fwd"]
    layer_norm_bwd = impl["layer_norm_bwd"]
    softmax_fwd = impl["softmax_fwd"]
    softmax_bwd = impl["softmax_bwd"]
    avg_pool5 = impl["avg_pool5"]
    bilinear_resize = impl["bilinear_resize"]
    _backend = name


def active_backend() -> str:
    return _backend


set_backend(default_backend())
