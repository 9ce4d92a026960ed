"""Dense tensor substrate.

Tensors are plain ``numpy.ndarray`` values in channels-last layout
(B, H, W, C).  Every function here is pure: inputs are never written to.
Backward helpers for the differentiable primitives live next to their
forward kernels so the autodiff tape stays a thin bookkeeping layer.
"""

from __future__ import annotations

import contextlib
import math
from typing import Iterator, NamedTuple

import numpy as np

LN_EPS = 1e-6
_GELU_C = math.sqrt(2.0 / math.pi)

_state = {"dtype": np.dtype(np.float32), "debug": False}


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


# --- precision / debug -------------------------------------------------------


def get_dtype() -> np.dtype:
    return _state["dtype"]


def set_precision(name: str) -> None:
    """Select the default scalar type: ``"float32"`` or ``"float64"``."""
    if name not in ("float32", "float64"):
        raise ValueError(f"unsupported precision {name!r}")
    _state["dtype"] = np.dtype(name)


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    old = _state["dtype"]
    set_precision(name)
    try:
        yield
    finally:
        _state["dtype"] = old


def set_debug(flag: bool) -> None:
    _state["debug"] = bool(flag)


def debug_enabled() -> bool:
    return _state["debug"]


@contextlib.contextmanager
def debug(flag: bool = True) -> Iterator[None]:
    old = _state["debug"]
    _state["debug"] = flag
    try:
        yield
    finally:
        _state["debug"] = old


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    """Raise if ``x`` holds NaN/Inf, but only in debug mode."""
    if _state["debug"] and not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values produced by {where}")
    return x


def asarray(x, dtype=None) -> np.ndarray:
    arr = np.asarray(x, dtype=dtype or get_dtype())
    if arr.ndim and min(arr.shape) < 1:
        raise ShapeError(f"all extents must be >= 1, got {arr.shape}")
    return arr


class Shape4(NamedTuple):
    b: int
    h: int
    w: int
    c: int

    @classmethod
    def of(cls, x: np.ndarray) -> "Shape4":
        if x.ndim != 4:
            raise ShapeError(f"expected (B, H, W, C) tensor, got shape {x.shape}")
        shape = cls(*x.shape)
        if min(shape) < 1:
            raise ShapeError(f"all extents must be >= 1, got {tuple(shape)}")
        return shape


# --- linear algebra ----------------------------------------------------------


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """2-D matrix product (BLAS-backed).

    The BLAS kernel is deterministic for a fixed build and thread count;
    :func:`matmul_reference` fixes the summation order explicitly.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return check_finite(a @ b, "matmul")


def matmul_reference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product accumulated strictly in k = 0, 1, ... order.

    Bitwise equal to the textbook triple loop; slow, used for verification.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a[:, 0:1] * b[0:1, :]
    for k in range(1, a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def linear(x: np.ndarray, w: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Apply ``x @ w + bias`` over the last axis of ``x``."""
    lead = x.shape[:-1]
    out = matmul(x.reshape(-1, x.shape[-1]), w)
    if bias is not None:
        out = out + bias
    return out.reshape(*lead, w.shape[1])


# --- elementwise -------------------------------------------------------------


def sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def gelu(x: np.ndarray) -> np.ndarray:
    """Tanh approximation of GELU."""
    return gelu_fwd(x)[0]


def gelu_fwd(x):
    """Returns (out, tanh term); the latter is reused by :func:`gelu_bwd`."""
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def gelu_bwd(g, x, t):
    du = _GELU_C * (1.0 + 3 * 0.044715 * (x * x))
    return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


# --- normalization -----------------------------------------------------------


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    return layer_norm_fwd(x, gamma, beta, eps)[0]


def layer_norm_fwd(x, gamma, beta, eps=LN_EPS):
    """Returns (out, xhat, rstd); the last two are saved for backward."""
    if x.shape[-1] != gamma.shape[-1] or gamma.shape != beta.shape:
        raise ShapeError(f"layer_norm: channels {x.shape[-1]} vs gamma {gamma.shape}, beta {beta.shape}")
    mean = x.mean(axis=-1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return check_finite(xhat * gamma + beta, "layer_norm"), xhat, rstd


def layer_norm_bwd(g, xhat, rstd, gamma):
    """Gradients (dx, dgamma, dbeta) of :func:`layer_norm`."""
    red = tuple(range(g.ndim - 1))
    dgamma = (g * xhat).sum(axis=red)
    dbeta = g.sum(axis=red)
    gx = g * gamma
    dx = rstd * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


# --- convolutions ------------------------------------------------------------


def _check_odd(k: int) -> None:
    if k % 2 == 0:
        raise ShapeError(f"kernel size must be odd, got {k}")


def depthwise_conv2d(x: np.ndarray, k: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Per-channel KxK convolution with zero 'same' padding."""
    s = Shape4.of(x)
    ks = k.shape[0]
    _check_odd(ks)
    if k.shape != (ks, ks, s.c) or bias.shape != (s.c,):
        raise ShapeError(f"depthwise kernel {k.shape} / bias {bias.shape} do not match channels {s.c}")
    p = ks // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    out = np.broadcast_to(bias, x.shape).copy()
    for di in range(ks):
        for dj in range(ks):
            out += xp[:, di : di + s.h, dj : dj + s.w, :] * k[di, dj]
    return check_finite(out, "depthwise_conv2d")


def depthwise_conv2d_bwd(g, x, k):
    s = Shape4.of(x)
    ks = k.shape[0]
    p = ks // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    gxp = np.zeros_like(xp)
    gk = np.empty_like(k)
    for di in range(ks):
        for dj in range(ks):
            gxp[:, di : di + s.h, dj : dj + s.w, :] += g * k[di, dj]
            gk[di, dj] = (xp[:, di : di + s.h, dj : dj + s.w, :] * g).sum(axis=(0, 1, 2))
    gx = gxp[:, p : p + s.h, p : p + s.w, :]
    return gx, gk, g.sum(axis=(0, 1, 2))


def _conv_cols(x, ks, stride):
    s = Shape4.of(x)
    p = ks // 2
    ho = (s.h + 2 * p - ks) // stride + 1
    wo = (s.w + 2 * p - ks) // stride + 1
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    cols = np.empty((s.b, ho, wo, ks, ks, s.c), dtype=x.dtype)
    for di in range(ks):
        for dj in range(ks):
            cols[:, :, :, di, dj, :] = xp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride, :]
    return cols, xp.shape, (ho, wo)


def conv2d(x: np.ndarray, w: np.ndarray, bias: np.ndarray, stride: int = 1) -> np.ndarray:
    """Dense convolution, weight layout (K, K, C_in, C_out), zero padding K//2."""
    return conv2d_fwd(x, w, bias, stride)[0]


def conv2d_fwd(x, w, bias, stride=1):
    ks = w.shape[0]
    _check_odd(ks)
    if w.shape[:3] != (ks, ks, x.shape[-1]):
        raise ShapeError(f"conv weight {w.shape} does not match input channels {x.shape[-1]}")
    cols, _, (ho, wo) = _conv_cols(x, ks, stride)
    flat = cols.reshape(-1, ks * ks * x.shape[-1])
    out = matmul(flat, w.reshape(-1, w.shape[-1])) + bias
    return out.reshape(x.shape[0], ho, wo, w.shape[-1]), flat


def conv2d_bwd(g, x, w, flat, stride=1):
    ks = w.shape[0]
    p = ks // 2
    b, ho, wo, cout = g.shape
    g2 = g.reshape(-1, cout)
    gw = (flat.T @ g2).reshape(w.shape)
    gb = g2.sum(axis=0)
    gcols = (g2 @ w.reshape(-1, cout).T).reshape(b, ho, wo, ks, ks, x.shape[-1])
    gxp = np.zeros((b, x.shape[1] + 2 * p, x.shape[2] + 2 * p, x.shape[3]), dtype=g.dtype)
    for di in range(ks):
        for dj in range(ks):
            gxp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride, :] += gcols[:, :, :, di, dj, :]
    return gxp[:, p : p + x.shape[1], p : p + x.shape[2], :], gw, gb


# --- pooling / resampling ----------------------------------------------------


def avg_pool_global(x: np.ndarray) -> np.ndarray:
    Shape4.of(x)
    return x.mean(axis=(1, 2))


def interp_matrix(n_out: int, n_in: int, dtype=None) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix for 1-D bilinear resampling
    with aligned pixel centres (half-pixel convention)."""
    m = np.zeros((n_out, n_in), dtype=dtype or get_dtype())
    if n_out == n_in:
        np.fill_diagonal(m, 1.0)
        return m
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def resize_bilinear(x: np.ndarray, h: int, w: int) -> np.ndarray:
    """Resize a (..., H, W, C) tensor spatially."""
    ry = interp_matrix(h, x.shape[-3], x.dtype)
    rx = interp_matrix(w, x.shape[-2], x.dtype)
    *lead, h0, w0, c = x.shape
    # separable: rows, then columns, as batched matmuls
    y = ry @ x.reshape(*lead, h0, w0 * c)
    y = np.swapaxes(y.reshape(*lead, h, w0, c), -1, -2) @ rx.T
    return np.ascontiguousarray(np.swapaxes(y, -1, -2))


# --- losses ------------------------------------------------------------------


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def smoothed_targets(labels: np.ndarray, num_classes: int, smoothing: float, dtype=None) -> np.ndarray:
    q = np.full((labels.shape[0], num_classes), smoothing / num_classes, dtype=dtype or get_dtype())
    q[np.arange(labels.shape[0]), labels] += 1.0 - smoothing
    return q


def cross_entropy(logits: np.ndarray, labels: np.ndarray, smoothing: float = 0.0) -> float:
    q = smoothed_targets(labels, logits.shape[-1], smoothing, logits.dtype)
    return float(-(q * log_softmax(logits)).sum(axis=-1).mean())
