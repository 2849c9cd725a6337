"""Differentiable neural-network primitives built on :mod:`lungx.tensor`."""
from __future__ import annotations

import math
from typing import Optional, Tuple, Union

import numpy as np
from scipy.special import erf, expit

from .tensor import Tensor, make

Padding = Union[str, int]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def same_padding(size: int, kernel: int, stride: int) -> Tuple[int, int, int]:
    """Output extent and (before, after) padding for ceil-division same padding.

    Any odd leftover row/column goes to the bottom/right.
    """
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def _conv_geometry(h: int, w: int, kh: int, kw: int, stride: int, padding: Padding):
    if padding == "same":
        ho, pt, pb = same_padding(h, kh, stride)
        wo, pl, pr = same_padding(w, kw, stride)
    else:
        p = int(padding)
        if p < 0:
            raise ValueError(f"padding must be 'same' or a non-negative int, got {padding!r}")
        pt = pb = pl = pr = p
        ho = (h + 2 * p - kh) // stride + 1
        wo = (w + 2 * p - kw) // stride + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"kernel {kh}x{kw} does not fit input {h}x{w} with padding {p}")
    return ho, wo, ((0, 0), (0, 0), (pt, pb), (pl, pr))


def _window(a: np.ndarray, i: int, j: int, ho: int, wo: int, stride: int) -> Tuple:
    return (slice(None), slice(None), slice(i, i + stride * (ho - 1) + 1, stride),
            slice(j, j + stride * (wo - 1) + 1, stride))


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: Padding = "same",
) -> Tensor:
    """2-D cross-correlation of ``x[B,C,H,W]`` with ``kernel[O,C,kh,kw]``."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if x.ndim != 4 or kernel.ndim != 4 or kernel.shape[1] != x.shape[1]:
        raise ValueError(f"conv2d shape mismatch: input {x.shape}, kernel {kernel.shape}")
    b, c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    ho, wo, pads = _conv_geometry(h, w, kh, kw, stride, padding)
    wmat = kernel.data.reshape(o, c * kh * kw)

    if kh == kw == 1 and stride == 1 and pads[2] == (0, 0) and pads[3] == (0, 0):
        cols = x.data.reshape(b, c, h * w)
        xp = None
    else:
        xp = np.pad(x.data, pads)
        cols = np.empty((b, c, kh, kw, ho, wo), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, :, i, j] = xp[_window(xp, i, j, ho, wo, stride)]
        cols = cols.reshape(b, c * kh * kw, ho * wo)
    out = (wmat @ cols).reshape(b, o, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)

    def backward(g):
        g2 = g.reshape(b, o, ho * wo)
        gk = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(kernel.shape) if kernel.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = wmat.T @ g2
            if xp is None:
                gx = gcols.reshape(x.shape)
            else:
                gcols = gcols.reshape(b, c, kh, kw, ho, wo)
                gxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        gxp[_window(gxp, i, j, ho, wo, stride)] += gcols[:, :, i, j]
                gx = gxp[:, :, pads[2][0]:pads[2][0] + h, pads[3][0]:pads[3][0] + w]
        return (gx, gk) if bias is None else (gx, gk, gb)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make(out, parents, backward, "conv2d")


def depthwise_conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: Padding = "same",
) -> Tensor:
    """Per-channel cross-correlation with ``kernel[C,1,kh,kw]``."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if x.ndim != 4 or kernel.ndim != 4 or kernel.shape[0] != x.shape[1] or kernel.shape[1] != 1:
        raise ValueError(f"depthwise_conv2d shape mismatch: input {x.shape}, kernel {kernel.shape}")
    b, c, h, w = x.shape
    _, _, kh, kw = kernel.shape
    ho, wo, pads = _conv_geometry(h, w, kh, kw, stride, padding)
    xp = np.pad(x.data, pads)
    k = kernel.data[:, 0]
    out = np.zeros((b, c, ho, wo), dtype=np.result_type(x.dtype, kernel.dtype))
    for i in range(kh):
        for j in range(kw):
            out += xp[_window(xp, i, j, ho, wo, stride)] * k[None, :, i, j, None, None]
    if bias is not None:
        out += bias.data.reshape(1, c, 1, 1)

    def backward(g):
        gk = np.zeros_like(kernel.data) if kernel.requires_grad else None
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                win = _window(xp, i, j, ho, wo, stride)
                if gk is not None:
                    gk[:, 0, i, j] = np.einsum("bchw,bchw->c", g, xp[win])
                if gxp is not None:
                    gxp[win] += g * k[None, :, i, j, None, None]
        gx = None
        if gxp is not None:
            gx = gxp[:, :, pads[2][0]:pads[2][0] + h, pads[3][0]:pads[3][0] + w]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return (gx, gk) if bias is None else (gx, gk, gb)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make(out, parents, backward, "depthwise_conv2d")


def pool2d(x: Tensor, kind: str, window: int, stride: Optional[int] = None) -> Tensor:
    """Unpadded max/avg pooling. Max routes gradient to the first maximum in scan order."""
    stride = window if stride is None else stride
    b, c, h, w = x.shape
    if window > h or window > w:
        raise ValueError(f"pool window {window} larger than input {h}x{w}")
    if kind not in ("max", "avg"):
        raise ValueError(f"unknown pool kind {kind!r}")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    wins = [_window(x.data, i, j, ho, wo, stride) for i in range(window) for j in range(window)]
    stack = np.stack([x.data[s] for s in wins], axis=2)
    if kind == "max":
        arg = np.argmax(stack, axis=2)
        out = np.take_along_axis(stack, arg[:, :, None], axis=2)[:, :, 0]
    else:
        out = stack.mean(axis=2)

    def backward(g):
        gx = np.zeros_like(x.data)
        for n, s in enumerate(wins):
            if kind == "max":
                gx[s] += g * (arg == n)
            else:
                gx[s] += g / (window * window)
        return (gx,)

    return make(out, (x,), backward, f"{kind}pool2d")


def global_pool(x: Tensor, kind: str) -> Tensor:
    """Pool each channel to a single value: ``[B,C,H,W] -> [B,C,1,1]``."""
    b, c, h, w = x.shape
    flat = x.reshape(b, c, h * w)
    if kind == "avg":
        pooled = flat.mean(axis=2, keepdims=True)
    elif kind == "max":
        pooled = flat.max(axis=2, keepdims=True)
    else:
        raise ValueError(f"unknown pool kind {kind!r}")
    return pooled.reshape(b, c, 1, 1)


def resize_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Linear interpolation weights ``[n_out, n_in]`` with half-pixel centres and edge clamping."""
    if n_out < 1 or n_in < 1:
        raise ValueError(f"resize extents must be >= 1, got {n_in} -> {n_out}")
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, i0), 1.0 - frac)
    np.add.at(mat, (rows, i1), frac)
    return mat.astype(dtype)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    h, w = x.shape[-2:]
    rh = resize_matrix(h, out_h, x.dtype)
    rw = resize_matrix(w, out_w, x.dtype)
    out = rh @ x.data @ rw.T
    return make(out, (x,), lambda g: (rh.T @ g @ rw,), "bilinear_resize")


# -- activations ------------------------------------------------------------
def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return make(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
    return make(x.data * cdf, (x,), lambda g: (g * (cdf + x.data * pdf),), "gelu")


def silu(x: Tensor) -> Tensor:
    s = expit(x.data)
    return make(x.data * s, (x,), lambda g: (g * s * (1 + x.data * (1 - s)),), "silu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.shape[axis] == 0:
        raise ValueError("softmax over a zero-length axis")
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make(s, (x,), backward, "softmax")


# -- normalisation ----------------------------------------------------------
def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise over the last axis, then apply the affine ``gain``/``bias``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = x.shape[-1]
    if n == 0:
        raise ValueError("layernorm over a zero-length axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gain.data
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make(out, (x, gain, bias), backward, "layernorm")


def batchnorm(
    x: Tensor,
    gain: Tensor,
    bias: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalisation over axis 1 of ``[B,C]`` or ``[B,C,H,W]`` inputs.

    In training mode the batch statistics normalise the input and the running
    buffers are updated in place (unbiased variance). In eval mode the running
    buffers are used and left untouched.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    g_ = gain.data.reshape(bshape)
    if training:
        count = x.size // x.shape[1]
        mu = x.data.mean(axis=axes, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        unbiased = var.reshape(-1) * (count / max(count - 1, 1))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        inv = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype).reshape(bshape)
        xhat = (x.data - running_mean.astype(x.dtype).reshape(bshape)) * inv
    out = xhat * g_ + bias.data.reshape(bshape)

    def backward(g):
        dxhat = g * g_
        if training:
            gx = inv * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
        else:
            gx = dxhat * inv
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return make(out, (x, gain, bias), backward, "batchnorm")


def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` for ``weight[out, in]`` over any leading dims."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear inner dimension mismatch: input {x.shape}, weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ weight.data if x.requires_grad else None
        gw = g2.T @ x.data.reshape(-1, x.shape[-1]) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(out, parents, backward, "linear")
