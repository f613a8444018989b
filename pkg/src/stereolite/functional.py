"""Differentiable neural-net primitives built on the raw kernels.

2D paths use [N,C,H,W] layout, 3D paths [N,C,D,H,W]; the spatial rank is
inferred from the kernel.  Convolution follows the cross-correlation
convention (no kernel flip) and the usual floor-division output extents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .kernels import check
from .tensor import Tensor, as_tensor


@dataclass
class ConvParams:
    """Declarative description of one convolution.

    ``weights`` layout is [Cout, Cin/groups, *k] for an ordinary convolution
    and [Cin, Cout/groups, *k] for a transposed one.
    """

    weights: Tensor
    bias: Tensor | None = None
    stride: int | tuple = 1
    padding: int | tuple = 0
    dilation: int | tuple = 1
    groups: int = 1
    output_padding: int | tuple = 0

    @property
    def rank(self):
        return self.weights.ndim - 2


def conv(x, p: ConvParams):
    return conv_nd(x, p.weights, p.bias, p.stride, p.padding, p.dilation, p.groups)


def conv_transposed(x, p: ConvParams):
    return conv_transpose_nd(x, p.weights, p.bias, p.stride, p.padding,
                             p.dilation, p.groups, p.output_padding)


def conv_nd(x, w, bias=None, stride=1, padding=0, dilation=1, groups=1):
    x, w = as_tensor(x), as_tensor(w)
    rank = w.ndim - 2
    check(x.ndim == rank + 2,
          f"input rank {x.ndim} does not match kernel spatial rank {rank}")
    check(x.shape[1] == w.shape[1] * groups,
          f"channel axis: input has {x.shape[1]} channels, kernel expects "
          f"{w.shape[1] * groups}")
    b = as_tensor(bias) if bias is not None else None
    out_data = K.conv_nd(x.data, w.data, stride, padding, dilation, groups,
                         None if b is None else b.data)
    in_spatial = x.shape[2:]
    ksize = w.shape[2:]

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(K.conv_nd_vjp_x(g, w.data, in_spatial, stride,
                                              padding, dilation, groups))
        if w.requires_grad:
            w.accumulate_grad(K.conv_nd_vjp_w(x.data, g, ksize, stride,
                                              padding, dilation, groups))
        if b is not None and b.requires_grad:
            axes = (0,) + tuple(range(2, 2 + rank))
            b.accumulate_grad(g.sum(axis=axes).astype(b.dtype))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(out_data, parents, backward, "conv")


def conv_transpose_nd(x, w, bias=None, stride=1, padding=0, dilation=1,
                      groups=1, output_padding=0):
    """Adjoint of :func:`conv_nd` with shared weights.

    Implemented as zero-stuffing followed by an ordinary convolution with the
    flipped kernel; multiply counting therefore reflects the stuffed-input
    convolution (kernel taps x channels x output positions).
    """
    x, w = as_tensor(x), as_tensor(w)
    rank = w.ndim - 2
    check(x.ndim == rank + 2,
          f"input rank {x.ndim} does not match kernel spatial rank {rank}")
    check(x.shape[1] == w.shape[0],
          f"channel axis: input has {x.shape[1]} channels, transposed kernel "
          f"expects {w.shape[0]}")
    b = as_tensor(bias) if bias is not None else None
    ksize = w.shape[2:]
    dil = K._as_tuple(dilation, rank)
    pad = K._as_tuple(padding, rank)
    conv_pad = tuple(d * (k - 1) - p for k, d, p in zip(ksize, dil, pad))
    check(all(p >= 0 for p in conv_pad),
          "padding exceeds dilated kernel extent in transposed convolution")

    xs = K.zero_stuff(x.data, stride, output_padding)
    wt = K.flip_kernel_for_transpose(w.data, groups)
    out_data = K.conv_nd(xs, wt, 1, conv_pad, dilation, groups,
                         None if b is None else b.data)
    stuffed_spatial = xs.shape[2:]
    in_spatial = x.shape[2:]
    cin = x.shape[1]

    def backward(g):
        if x.requires_grad:
            gs = K.conv_nd_vjp_x(g, wt, stuffed_spatial, 1, conv_pad,
                                 dilation, groups)
            x.accumulate_grad(K.zero_stuff_vjp(gs, stride, in_spatial))
        if w.requires_grad:
            gwt = K.conv_nd_vjp_w(xs, g, ksize, 1, conv_pad, dilation, groups)
            w.accumulate_grad(K.unflip_kernel_grad(gwt, groups, cin))
        if b is not None and b.requires_grad:
            axes = (0,) + tuple(range(2, 2 + rank))
            b.accumulate_grad(g.sum(axis=axes).astype(b.dtype))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(out_data, parents, backward, "conv_transposed")


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               eps=1e-5, momentum=0.1):
    """Per-channel normalization over all non-channel axes.

    Train mode normalizes with the biased batch variance and updates the
    running stats in place (unbiased variance, exponential momentum).  Eval
    mode uses the running stats.  ``running_mean``/``running_var`` are plain
    numpy buffers, not graph nodes.
    """
    x = as_tensor(x)
    gamma, beta = as_tensor(gamma), as_tensor(beta)
    c = x.shape[1]
    check(gamma.shape == (c,), f"gamma length {gamma.shape} != channels {c}")
    check(beta.shape == (c,), f"beta length {beta.shape} != channels {c}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    n = x.size // c

    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running_mean is not None:
            corr = n / max(n - 1, 1)
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * var * corr
    else:
        mu = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out_data = (xhat * gamma.data.reshape(bshape)
                + beta.data.reshape(bshape)).astype(x.dtype)

    def backward(g):
        gr = gamma.data.reshape(bshape)
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=axes).astype(gamma.dtype))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=axes).astype(beta.dtype))
        if not x.requires_grad:
            return
        if training:
            gx_hat = g * gr
            term1 = gx_hat
            term2 = gx_hat.mean(axis=axes).reshape(bshape)
            term3 = xhat * (gx_hat * xhat).mean(axis=axes).reshape(bshape)
            gx = (term1 - term2 - term3) * inv.reshape(bshape)
        else:
            gx = g * gr * inv.reshape(bshape)
        x.accumulate_grad(gx.astype(x.dtype))

    return Tensor._make(out_data, (x, gamma, beta), backward, "batch_norm")


def softmax(x, axis):
    x = as_tensor(x)
    check(-x.ndim <= axis < x.ndim, f"softmax axis {axis} out of range")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            x.accumulate_grad(((g - dot) * out_data).astype(x.dtype))

    return Tensor._make(out_data.astype(x.dtype), (x,), backward, "softmax")


def interpolate(x, scale_factors, mode):
    """Bilinear/trilinear resize with align_corners=False coordinates."""
    x = as_tensor(x)
    rank = x.ndim - 2
    check((mode, rank) in {("bilinear", 2), ("trilinear", 3)},
          f"mode {mode!r} does not match spatial rank {rank}")
    out_data = K.interp_nd(x.data, scale_factors)
    in_spatial = x.shape[2:]

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(K.interp_nd_vjp(g, in_spatial, scale_factors))

    return Tensor._make(out_data, (x,), backward, "interpolate")


def smooth_l1(pred, target, mask=None):
    """Mean smooth-L1 over valid entries: 0.5 e^2 for |e|<1, |e|-0.5 otherwise."""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=pred.dtype)
    check(pred.shape == target.shape,
          f"prediction shape {pred.shape} != target shape {target.shape}")
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("smooth_l1: no valid pixels in mask")
    e = np.where(mask, pred.data - target, 0.0).astype(pred.dtype)
    ae = np.abs(e)
    loss = np.where(ae < 1.0, 0.5 * e * e, ae - 0.5)
    out_data = np.asarray(loss.sum() / count, dtype=pred.dtype)

    def backward(g):
        if pred.requires_grad:
            de = np.clip(e, -1.0, 1.0) * mask / count
            pred.accumulate_grad((g * de).astype(pred.dtype))

    return Tensor._make(out_data, (pred,), backward, "smooth_l1")
