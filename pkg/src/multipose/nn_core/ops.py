"""Differentiable operators over NHWC tensors.

Feature maps are ``(B, H, W, C)``; convolution kernels are ``(kh, kw, Cin, Cout)``
and dense weights are ``(in, out)``. All reductions use numpy's fixed summation
order, so repeated forward passes on identical inputs are bit-identical.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import expit

from .tensor import ShapeError, Tensor, as_tensor, make_result

# When a list is installed here, relu appends min |input| on every call.
# The gradient checker uses it to move away from kinks.
_relu_monitor: list | None = None


def _operand(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


def add(a, b) -> Tensor:
    a = _operand(a)
    b = _operand(b, a)
    _broadcast_shape("add", a, b)

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return make_result(a.data + b.data, (a, b), _bw, "add")


def sub(a, b) -> Tensor:
    a = _operand(a)
    b = _operand(b, a)
    _broadcast_shape("sub", a, b)

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return make_result(a.data - b.data, (a, b), _bw, "sub")


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting.

    A ``(B, C)`` operand against a ``(B, H, W, C)`` one is broadcast over the
    spatial axes (per-channel scaling).
    """
    a = _operand(a)
    b = _operand(b, a)
    if a.ndim == 4 and b.ndim == 2:
        b = reshape(b, (b.shape[0], 1, 1, b.shape[1]))
    elif b.ndim == 4 and a.ndim == 2:
        a = reshape(a, (a.shape[0], 1, 1, a.shape[1]))
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * bd, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ad, b.shape))

    return make_result(ad * bd, (a, b), _bw, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = a.dtype.type(c)

    def _bw(g):
        a._accumulate(g * c)

    return make_result(a.data * c, (a,), _bw, "scale")


def square(a: Tensor) -> Tensor:
    a = as_tensor(a)
    ad = a.data

    def _bw(g):
        a._accumulate(2 * g * ad)

    return make_result(ad * ad, (a,), _bw, "square")


def reshape(a: Tensor, shape: tuple) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    src = a.shape

    def _bw(g):
        a._accumulate(g.reshape(src))

    return make_result(out, (a,), _bw, "reshape")


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    src = a.shape
    out = a.data.sum(axis=axis)
    out = np.asarray(out, dtype=a.dtype)

    def _bw(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, src))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), src))

    return make_result(out, (a,), _bw, "sum")


def mean(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return scale(sum(a), 1.0 / a.size)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    if _relu_monitor is not None:
        _relu_monitor.append(float(np.abs(xd).min()) if xd.size else np.inf)
    out = np.maximum(xd, 0)

    def _bw(g):
        x._accumulate(g * (xd > 0))

    return make_result(out, (x,), _bw, "relu")


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = expit(x.data)

    def _bw(g):
        x._accumulate(g * out * (1 - out))

    return make_result(out, (x,), _bw, "sigmoid")


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` for ``x`` of shape ``(B, in)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"fully_connected: input {x.shape} incompatible with weight {weight.shape}"
        )
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"fully_connected: bias {bias.shape} != ({weight.shape[1]},)")
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def _bw(g):
        if x.requires_grad:
            x._accumulate(g @ wd.T)
        if weight.requires_grad:
            weight._accumulate(xd.T @ g)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=0))

    return make_result(out, parents, _bw, "fully_connected")


@lru_cache(maxsize=64)
def _patch_index(Wp: int, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Flat pixel index of every (out_y, out_x, ky, kx) tap in a padded map of width ``Wp``."""
    oy = np.arange(ho)[:, None, None, None] * stride
    ox = np.arange(wo)[None, :, None, None] * stride
    ky = np.arange(kh)[None, None, :, None]
    kx = np.arange(kw)[None, None, None, :]
    return ((oy + ky) * Wp + ox + kx).reshape(-1)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation on NHWC input with an HWIO kernel."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be (B,H,W,C), got {x.shape}")
    if weight.ndim != 4 or weight.shape[2] != x.shape[3]:
        raise ShapeError(
            f"conv2d: kernel {weight.shape} does not match input channels {x.shape[3]}"
        )
    kh, kw, cin, cout = weight.shape
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias {bias.shape} != ({cout},)")
    B, H, W, _ = x.shape
    Hp, Wp = H + 2 * padding, W + 2 * padding
    ho = (Hp - kh) // stride + 1
    wo = (Wp - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")

    xd = x.data
    if padding:
        xp = np.zeros((B, Hp, Wp, cin), dtype=xd.dtype)
        xp[:, padding:padding + H, padding:padding + W] = xd
    else:
        xp = xd
    # One gather instead of kh*kw strided copies; much cheaper on small maps.
    idx = _patch_index(Wp, kh, kw, stride, ho, wo)
    cols = np.take(xp.reshape(B, Hp * Wp, cin), idx, axis=1).reshape(B * ho * wo, kh * kw * cin)
    wmat = weight.data.reshape(kh * kw * cin, cout)
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    out = out.reshape(B, ho, wo, cout)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def _bw(g):
        g2 = g.reshape(B * ho * wo, cout)
        if weight.requires_grad:
            weight._accumulate((cols.T @ g2).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(B, ho, wo, kh, kw, cin)
            dxp = np.zeros((B, Hp, Wp, cin), dtype=xd.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
            x._accumulate(dxp[:, padding:padding + H, padding:padding + W])

    return make_result(out, parents, _bw, "conv2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: ``(B, H, W, C) -> (B, C)``."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: input must be (B,H,W,C), got {x.shape}")
    B, H, W, C = x.shape
    n = H * W
    out = x.data.reshape(B, n, C).sum(axis=1) / x.dtype.type(n)

    def _bw(g):
        x._accumulate(np.broadcast_to((g / n)[:, None, None, :], x.shape))

    return make_result(out, (x,), _bw, "global_avg_pool")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest: input must be (B,H,W,C), got {x.shape}")
    if factor < 1:
        raise ShapeError(f"upsample_nearest: factor must be >= 1, got {factor}")
    B, H, W, C = x.shape
    out = np.broadcast_to(x.data[:, :, None, :, None, :], (B, H, factor, W, factor, C))
    out = out.reshape(B, H * factor, W * factor, C)

    def _bw(g):
        x._accumulate(g.reshape(B, H, factor, W, factor, C).sum(axis=(2, 4)))

    return make_result(out, (x,), _bw, "upsample_nearest")
