"""Layer kernels with exact backward rules.

Volumes are laid out channels-first, ``(N, C, D, H, W)``.  Sequences for the
transformer path are ``(N, T, E)``.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .tensor import Tensor, concat, ensure_tensor, matmul, unbroadcast


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    return tuple(int(x) for x in v)


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """3D cross-correlation, computed as one matmul over an unfolded input."""
    if x.ndim != 5 or weight.ndim != 5:
        raise ValueError(f"conv3d expects 5D input/weight, got {x.shape} and {weight.shape}")
    n, c, d, h, w = x.shape
    o, ci, kd, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"conv3d channel mismatch: input has {c}, weight expects {ci}")
    sd, sh, sw = _triple(stride)
    pd, ph, pw = _triple(padding)
    if min(sd, sh, sw) < 1:
        raise ValueError("stride must be >= 1")
    od = (d + 2 * pd - kd) // sd + 1
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    if min(od, oh, ow) < 1:
        raise ValueError(f"conv3d output dims not positive for input {x.shape}, kernel {weight.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw))) if (pd or ph or pw) else x.data
    win = sliding_window_view(xp, (kd, kh, kw), axis=(2, 3, 4))
    win = win[:, :, : (od - 1) * sd + 1 : sd, : (oh - 1) * sh + 1 : sh, : (ow - 1) * sw + 1 : sw]
    # (N, C, od, oh, ow, kd, kh, kw) -> (N, C*k^3, P)
    cols = np.ascontiguousarray(win.transpose(0, 1, 5, 6, 7, 2, 3, 4)).reshape(n, c * kd * kh * kw, -1)
    wmat = weight.data.reshape(o, -1)
    out = (wmat @ cols).reshape(n, o, od, oh, ow)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1, 1)

    def bw(g):
        g2 = g.reshape(n, o, -1)
        gw = None
        gx = None
        gb = None
        if weight.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(n, c, kd, kh, kw, od, oh, ow)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for a in range(kd):
                for b in range(kh):
                    for e in range(kw):
                        gxp[
                            :,
                            :,
                            a : a + (od - 1) * sd + 1 : sd,
                            b : b + (oh - 1) * sh + 1 : sh,
                            e : e + (ow - 1) * sw + 1 : sw,
                        ] += gcols[:, :, a, b, e]
            gx = gxp[:, :, pd : pd + d, ph : ph + h, pw : pw + w]
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, bw)


def avg_pool3d(x: Tensor, factor: int = 2) -> Tensor:
    n, c, d, h, w = x.shape
    f = factor
    if d % f or h % f or w % f:
        raise ValueError(f"avg_pool3d: dims {x.shape[2:]} not divisible by {f}")
    out = x.data.reshape(n, c, d // f, f, h // f, f, w // f, f).mean(axis=(3, 5, 7))

    def bw(g):
        g = g[:, :, :, None, :, None, :, None] / (f**3)
        return (np.broadcast_to(g, (n, c, d // f, f, h // f, f, w // f, f)).reshape(x.shape).copy(),)

    return Tensor._from_op(out, (x,), bw)


def upsample3d_nearest(x: Tensor, factor: int = 2) -> Tensor:
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    n, c, d, h, w = x.shape
    f = factor
    out = np.broadcast_to(
        x.data[:, :, :, None, :, None, :, None], (n, c, d, f, h, f, w, f)
    ).reshape(n, c, d * f, h * f, w * f)

    def bw(g):
        return (g.reshape(n, c, d, f, h, f, w, f).sum(axis=(3, 5, 7)),)

    return Tensor._from_op(out, (x,), bw)


def batchless_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Per-instance, per-channel normalization over the spatial axes."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    axes = tuple(range(2, x.ndim))
    m = int(np.prod(x.shape[2:]))
    # centre on one sample first so a constant channel gives exactly zero
    shift = x.data[(slice(None), slice(None)) + (slice(0, 1),) * len(axes)]
    d = x.data - shift
    xc = d - d.mean(axis=axes, keepdims=True)
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    bshape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    out = xhat
    if gamma is not None:
        out = out * gamma.data.reshape(bshape)
    if beta is not None:
        out = out + beta.data.reshape(bshape)

    def bw(g):
        gxhat = g * gamma.data.reshape(bshape) if gamma is not None else g
        gx = inv * (
            gxhat
            - gxhat.sum(axis=axes, keepdims=True) / m
            - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True) / m
        )
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=(0,) + axes))
        if beta is not None:
            grads.append(g.sum(axis=(0,) + axes))
        return tuple(grads)

    parents = [x] + [p for p in (gamma, beta) if p is not None]
    return Tensor._from_op(out, parents, bw)


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    e = x.shape[-1]
    d = x.data - x.data[..., :1]
    xc = d - d.mean(axis=-1, keepdims=True)
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data
    lead = tuple(range(x.ndim - 1))

    def bw(g):
        gxhat = g * gamma.data if gamma is not None else g
        gx = inv * (
            gxhat
            - gxhat.sum(axis=-1, keepdims=True) / e
            - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True) / e
        )
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=lead))
        if beta is not None:
            grads.append(g.sum(axis=lead))
        return tuple(grads)

    parents = [x] + [p for p in (gamma, beta) if p is not None]
    return Tensor._from_op(out, parents, bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    z = x.data
    cdf = 0.5 * (1.0 + erf(z / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    out = (z * cdf).astype(z.dtype)
    dz = (cdf + z * pdf).astype(z.dtype)
    return Tensor._from_op(out, (x,), lambda g: (g * dz,))


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    return Tensor._from_op(s, (x,), lambda g: (g * s * (1.0 - s),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    s = ez / ez.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(s, (x,), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with weight shaped (out, in)."""
    out = matmul(x, weight.transpose(1, 0))
    return out + bias if bias is not None else out


def mse(a: Tensor, b) -> Tensor:
    d = a - b
    return (d * d).mean()


def _split_heads(t: Tensor, heads: int) -> Tensor:
    n, tt, e = t.shape
    return t.reshape(n, tt, heads, e // heads).transpose(0, 2, 1, 3)


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """Returns (output, attention weights); inputs are (..., T, d)."""
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = matmul(q, k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)) * scale
    attn = softmax(scores, axis=-1)
    return matmul(attn, v), attn


def multi_head_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    heads: int,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    bq: Tensor | None = None,
    bk: Tensor | None = None,
    bv: Tensor | None = None,
    bo: Tensor | None = None,
    return_weights: bool = False,
):
    """Project, attend per head, concatenate, output-project."""
    e = q.shape[-1]
    if e % heads:
        raise ValueError(f"embed dim {e} not divisible by {heads} heads")
    n, t, _ = q.shape
    qh = _split_heads(linear(q, wq, bq), heads)
    kh = _split_heads(linear(k, wk, bk), heads)
    vh = _split_heads(linear(v, wv, bv), heads)
    ctx, attn = scaled_dot_product_attention(qh, kh, vh)
    merged = ctx.transpose(0, 2, 1, 3).reshape(n, t, e)
    out = linear(merged, wo, bo)
    return (out, attn) if return_weights else out


def broadcast_channels(vec: Tensor, spatial: tuple[int, ...]) -> Tensor:
    """(N, C) -> (N, C, *spatial) by repetition (gradient sums back)."""
    n, c = vec.shape
    ones = Tensor(np.ones((1, 1) + tuple(spatial), dtype=vec.dtype))
    return vec.reshape((n, c) + (1,) * len(spatial)) * ones


__all__ = [
    "avg_pool3d",
    "batchless_norm",
    "broadcast_channels",
    "concat",
    "conv3d",
    "ensure_tensor",
    "gelu",
    "layer_norm",
    "linear",
    "matmul",
    "mse",
    "multi_head_attention",
    "relu",
    "scaled_dot_product_attention",
    "sigmoid",
    "softmax",
    "unbroadcast",
    "upsample3d_nearest",
]
