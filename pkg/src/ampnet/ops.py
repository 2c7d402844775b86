"""Differentiable primitives.

Every function accepts :class:`Tensor` (or array-like for constant operands)
and returns a new Tensor. Feature maps are NCHW.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import DimensionError, ParameterError
from .tensor import DTYPE, Tensor, as_tensor, record

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --- elementwise and linear algebra -----------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return record("add", (a, b), out,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return record("sub", (a, b), out,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return record("mul", (a, b), out,
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data
    return record("matmul", (a, b), out, lambda g: (g @ b.data.T, a.data.T @ g))


def dense(x, w) -> Tensor:
    """Fully connected layer without bias: ``out[..., i] = sum_j w[i, j] * x[..., j]``.

    ``x`` may be a single vector ``[n]`` or a batch ``[B, n]``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != w.shape[1]:
        raise DimensionError(f"dense: input {x.shape} incompatible with weight {w.shape}")
    out = x.data @ w.data.T

    def backward(g):
        if x.ndim == 1:
            return g @ w.data, np.outer(g, x.data)
        return g @ w.data, g.T @ x.data

    return record("dense", (x, w), out, backward)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from exc
    return record("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def transpose(x) -> Tensor:
    x = as_tensor(x)
    return record("transpose", (x,), x.data.T, lambda g: (g.T,))


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return record("concat", tuple(tensors), out, lambda g: tuple(np.split(g, bounds, axis=axis)))


def split(x, sections: int, axis: int = 0) -> list[Tensor]:
    """Split into equal parts along ``axis``; each part is its own recorded op."""
    x = as_tensor(x)
    n = x.shape[axis] // sections
    parts = []
    for i in range(sections):
        index = [slice(None)] * x.ndim
        index[axis] = slice(i * n, (i + 1) * n)
        index = tuple(index)

        def backward(g, index=index):
            full = np.zeros_like(x.data)
            full[index] = g
            return (full,)

        parts.append(record("slice", (x,), x.data[index], backward))
    return parts


def sum(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    return record("sum", (x,), np.sum(x.data), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.size
    return record("mean", (x,), np.mean(x.data),
                  lambda g: (np.broadcast_to(g / n, x.shape).copy(),))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return record("sqrt", (x,), out, lambda g: (g * 0.5 / out,))


# --- activations ------------------------------------------------------------

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return record("relu", (x,), x.data * mask, lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data)
    return record("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def softmax(x) -> Tensor:
    """Softmax over the last axis."""
    x = as_tensor(x)
    e = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)
    return record("softmax", (x,), s,
                  lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),))


def activation(x, kind: str) -> Tensor:
    try:
        fn = {"relu": relu, "sigmoid": sigmoid, "softmax": softmax}[kind]
    except KeyError:
        raise ParameterError(f"unknown activation {kind!r}") from None
    return fn(x)


# --- convolution and normalisation ------------------------------------------

def conv2d(x, k, bias=None) -> Tensor:
    """Stride-1 cross-correlation with zero padding that preserves H and W.

    x: [B, C_in, H, W], k: [C_out, C_in, kh, kw] with odd kh, kw, bias: [C_out].
    """
    x, k = as_tensor(x), as_tensor(k)
    if x.ndim != 4 or k.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-d input and kernel, got {x.shape} and {k.shape}")
    if x.shape[1] != k.shape[1]:
        raise DimensionError(f"conv2d: input has {x.shape[1]} channels, kernel {k.shape} expects {k.shape[1]}")
    kh, kw = k.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d: kernel spatial size must be odd, got {kh}x{kw}")
    ph, pw = kh // 2, kw // 2
    pad = ((0, 0), (0, 0), (ph, ph), (pw, pw))
    cols = sliding_window_view(np.pad(x.data, pad), (kh, kw), axis=(2, 3))  # B,C,H,W,kh,kw
    out = np.tensordot(cols, k.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    inputs = (x, k)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (k.shape[0],):
            raise DimensionError(f"conv2d: bias {bias.shape} does not match {k.shape[0]} output channels")
        out = out + bias.data[None, :, None, None]
        inputs = (x, k, bias)

    def backward(g):
        dk = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        gcols = sliding_window_view(np.pad(g, pad), (kh, kw), axis=(2, 3))
        dx = np.tensordot(gcols, k.data[:, :, ::-1, ::-1], axes=([1, 4, 5], [0, 2, 3]))
        grads = [dx.transpose(0, 3, 1, 2), dk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return record("conv2d", inputs, np.ascontiguousarray(out), backward)


@dataclass
class BNState:
    """Per-channel running statistics for :func:`batchnorm`."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def fresh(cls, channels: int) -> "BNState":
        return cls(np.zeros(channels, dtype=DTYPE), np.ones(channels, dtype=DTYPE))


def batchnorm(x, gamma, beta, state: BNState, mode: str = "train", update: bool = True) -> Tensor:
    """Batch normalisation over (B, H, W) per channel.

    In ``train`` mode batch statistics are used and, unless ``update`` is False,
    the running statistics are blended in with ``running = m * running + (1 - m) * batch``.
    ``eval`` mode uses the running statistics.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm: {x.shape} needs gamma/beta of shape ({c},)")
    axes = (0, 2, 3)
    shape = (1, c, 1, 1)

    if mode == "train":
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if update:
            n = x.data.size // c
            unbiased = var * n / (n - 1) if n > 1 else var
            state.mean = state.momentum * state.mean + (1 - state.momentum) * mu
            state.var = state.momentum * state.var + (1 - state.momentum) * unbiased
    elif mode == "eval":
        mu, var = state.mean, state.var
    else:
        raise ParameterError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")

    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu.reshape(shape)) * inv.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(shape)
        if mode == "eval":
            return dxhat * inv.reshape(shape), dgamma, dbeta
        n = x.data.size // c
        dx = (inv.reshape(shape) / n) * (
            n * dxhat
            - dxhat.sum(axis=axes, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
        )
        return dx, dgamma, dbeta

    return record("batchnorm", (x, gamma, beta), out, backward)


# --- pooling ----------------------------------------------------------------

def pool_global(x, axis: str, kind: str) -> Tensor:
    """Global pooling of a [B, C, H, W] map.

    ``axis='spatial'`` reduces H, W to 1x1 per channel; ``axis='channel'`` reduces
    C to 1 per pixel. Max pooling routes gradient to the first maximal element.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"pool_global: expected [B, C, H, W], got {x.shape}")
    b, c, h, w = x.shape
    if axis == "spatial":
        flat = x.data.reshape(b, c, h * w)
        out_shape = (b, c, 1, 1)
    elif axis == "channel":
        flat = x.data.transpose(0, 2, 3, 1).reshape(b, h * w, c)
        out_shape = (b, 1, h, w)
    else:
        raise ParameterError(f"pool axis must be 'spatial' or 'channel', got {axis!r}")

    if kind == "avg":
        red = flat.mean(axis=-1)
    elif kind == "max":
        idx = flat.argmax(axis=-1)
        red = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    else:
        raise ParameterError(f"pool kind must be 'avg' or 'max', got {kind!r}")

    def backward(g):
        g = g.reshape(red.shape)
        if kind == "avg":
            gflat = np.broadcast_to(g[..., None] / flat.shape[-1], flat.shape).copy()
        else:
            gflat = np.zeros_like(flat)
            np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        if axis == "spatial":
            return (gflat.reshape(x.shape),)
        return (gflat.reshape(b, h, w, c).transpose(0, 3, 1, 2),)

    return record(f"pool_{axis}_{kind}", (x,), red.reshape(out_shape), backward)


# --- losses -----------------------------------------------------------------

def charbonnier(a, b, eps: float) -> Tensor:
    """Mean of ``sqrt((a - b)**2 + eps**2)`` over all elements."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"charbonnier: shapes {a.shape} and {b.shape} differ")
    if eps <= 0:
        raise ParameterError(f"charbonnier eps must be positive, got {eps}")
    d = a.data - b.data
    r = np.sqrt(d * d + eps * eps)
    n = d.size

    def backward(g):
        ga = g * d / r / n
        return ga, -ga

    return record("charbonnier", (a, b), np.mean(r), backward)
