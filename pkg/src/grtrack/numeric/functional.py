"""Differentiable building blocks composed on top of :mod:`tensor`."""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .tensor import Tensor, matmul

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; NaN inputs are rejected."""
    if np.isnan(x.data).any():
        raise FloatingPointError("softmax received NaN input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return ((x, out * (g - (g * out).sum(axis=axis, keepdims=True))),)

    return Tensor._make(out, (x,), back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def back(g):
        return ((x, g - sm * g.sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), back)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data * _SQRT1_2))
    pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
    return Tensor._make(x.data * cdf, (x,), lambda g: ((x, g * (cdf + x.data * pdf)),))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    if x.shape[-1] != gamma.shape[-1] or x.shape[-1] != beta.shape[-1]:
        raise ValueError(f"layer_norm: last dim {x.shape[-1]} vs gamma {gamma.shape} / beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data
    n = x.shape[-1]

    def back(g):
        gx = gb = gg = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True)
                         - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        if gamma.requires_grad:
            gg = (g * xhat).reshape(-1, n).sum(axis=0).reshape(gamma.shape)
        if beta.requires_grad:
            gb = g.reshape(-1, n).sum(axis=0).reshape(beta.shape)
        return ((x, gx), (gamma, gg), (beta, gb))

    return Tensor._make(out, (x, gamma, beta), back)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` with ``w`` stored as (in, out)."""
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear: input dim {x.shape[-1]} != weight rows {w.shape[0]}")
    lead = x.shape[:-1]
    y = matmul(x.reshape(-1, x.shape[-1]), w)
    if b is not None:
        y = y + b
    return y.reshape(*lead, w.shape[1])


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, padding: int = 1) -> Tensor:
    """Stride-1 convolution via im2col.

    ``x`` is (B, Cin, H, W); ``w`` is (k*k*Cin, Cout) with rows ordered as
    (ky, kx, cin). Returns (B, Cout, H', W'). The column product is counted
    like any other matmul.
    """
    bsz, cin, h, wd = x.shape
    k = int(round(math.sqrt(w.shape[0] // cin)))
    if k * k * cin != w.shape[0]:
        raise ValueError(f"conv2d: weight rows {w.shape[0]} incompatible with Cin={cin}")
    xp = np.pad(x.data, [(0, 0), (0, 0), (padding, padding), (padding, padding)])
    ho = h + 2 * padding - k + 1
    wo = wd + 2 * padding - k + 1
    # (B, Cin, Ho, Wo, k, k) -> (B, Ho, Wo, k, k, Cin)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 5, 1)).reshape(bsz * ho * wo, k * k * cin)
    y = matmul(Tensor._make(cols, (x,), _conv_cols_back(x, padding, k, ho, wo)), w)
    if b is not None:
        y = y + b
    return y.reshape(bsz, ho, wo, w.shape[1]).transpose(0, 3, 1, 2)


def _conv_cols_back(x: Tensor, padding: int, k: int, ho: int, wo: int):
    bsz, cin, h, wd = x.shape

    def back(g):
        g = g.reshape(bsz, ho, wo, k, k, cin)
        gp = np.zeros((bsz, cin, h + 2 * padding, wd + 2 * padding))
        for ky in range(k):
            for kx in range(k):
                gp[:, :, ky:ky + ho, kx:kx + wo] += g[:, :, :, ky, kx, :].transpose(0, 3, 1, 2)
        return ((x, gp[:, :, padding:padding + h, padding:padding + wd]),)

    return back


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward value is exactly ``hard``; the gradient flows into ``soft``."""
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.shape:
        raise ValueError("straight_through: shape mismatch")
    return Tensor._make(hard.copy(), (soft,), lambda g: ((soft, g),))


def mlp(x: Tensor, layers) -> Tensor:
    """Stack of ``(w, b)`` linear layers with GELU between them."""
    for i, (w, b) in enumerate(layers):
        x = linear(x, w, b)
        if i < len(layers) - 1:
            x = gelu(x)
    return x
