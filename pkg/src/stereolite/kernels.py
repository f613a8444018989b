"""Raw numpy compute kernels for the N-d convolution family.

Everything here operates on plain ``np.ndarray`` values; the autodiff layer in
:mod:`stereolite.tensor` wraps these into differentiable ops.  All reductions
inside a convolution accumulate in float64 when the working dtype is float32,
which keeps gradient checks and the nested-loop oracle comparisons stable.

A process-global multiply counter can be armed with :func:`count_macs`; while
armed, every convolution records the number of scalar multiplies its matmul
actually performs (kernel taps x reduced channels x output positions), tagged
with the current scope label.  BN, ReLU and residual additions are never
counted.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when tensor extents are inconsistent; names the offending axis."""


def check(cond, msg):
    if not cond:
        raise ShapeError(msg)


# ---------------------------------------------------------------------------
# multiply counting
# ---------------------------------------------------------------------------

@dataclass
class MacRecorder:
    entries: list = field(default_factory=list)  # (scope, macs)
    _scopes: list = field(default_factory=list)

    @property
    def total(self):
        return sum(m for _, m in self.entries)

    def record(self, macs):
        self.entries.append(("/".join(self._scopes) or "<root>", int(macs)))

    def by_scope(self):
        out = {}
        for label, macs in self.entries:
            out[label] = out.get(label, 0) + macs
        return out

    def subtotal(self, prefix):
        return sum(m for label, m in self.entries
                   if label == prefix or label.startswith(prefix + "/"))


_recorder = None


@contextlib.contextmanager
def count_macs():
    """Arm the multiply counter for the duration of the block."""
    global _recorder
    prev = _recorder
    _recorder = rec = MacRecorder()
    try:
        yield rec
    finally:
        _recorder = prev


@contextlib.contextmanager
def mac_scope(label):
    if _recorder is None:
        yield
        return
    _recorder._scopes.append(label)
    try:
        yield
    finally:
        _recorder._scopes.pop()


def _record_macs(n):
    if _recorder is not None:
        _recorder.record(n)


# ---------------------------------------------------------------------------
# shape arithmetic
# ---------------------------------------------------------------------------

def conv_out_extent(size, k, stride, pad, dilation):
    return (size + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def deconv_out_extent(size, k, stride, pad, dilation, output_padding):
    return (size - 1) * stride - 2 * pad + dilation * (k - 1) + 1 + output_padding


def _as_tuple(v, rank):
    if np.isscalar(v):
        return (int(v),) * rank
    t = tuple(int(x) for x in v)
    check(len(t) == rank, f"expected {rank} per-axis values, got {len(t)}")
    return t


# ---------------------------------------------------------------------------
# grouped N-d convolution (2d and 3d spatial ranks)
# ---------------------------------------------------------------------------

def _im2col(x, ksize, stride, pad, dilation):
    """Extract convolution patches.

    Returns an array of shape [N, C, *out_spatial, *ksize]; a strided view of
    the padded input, so no patch data is materialised here.
    """
    rank = x.ndim - 2
    if any(pad):
        width = [(0, 0), (0, 0)] + [(p, p) for p in pad]
        x = np.pad(x, width)
    eff = tuple(d * (k - 1) + 1 for k, d in zip(ksize, dilation))
    for ax, (e, size) in enumerate(zip(eff, x.shape[2:])):
        check(size >= e, f"spatial axis {ax}: padded extent {size} smaller "
                         f"than effective kernel {e}")
    cols = sliding_window_view(x, eff, axis=tuple(range(2, 2 + rank)))
    sel = (slice(None), slice(None))
    sel += tuple(slice(None, None, s) for s in stride)
    sel += tuple(slice(None, None, d) for d in dilation)
    return cols[sel]


def _acc_dtype(dt):
    return np.float64 if dt == np.float32 else dt


def conv_nd(x, w, stride, pad, dilation, groups, bias=None):
    """Cross-correlation of x [N,Cin,*S] with w [Cout,Cin/g,*K] -> [N,Cout,*O]."""
    rank = x.ndim - 2
    check(w.ndim == rank + 2, f"kernel rank {w.ndim - 2} does not match "
                              f"spatial rank {rank}")
    n, cin = x.shape[:2]
    cout, cg = w.shape[:2]
    ksize = w.shape[2:]
    check(cin % groups == 0, f"groups={groups} does not divide Cin={cin}")
    check(cout % groups == 0, f"groups={groups} does not divide Cout={cout}")
    check(cg == cin // groups,
          f"kernel channel axis: expected Cin/groups={cin // groups}, got {cg}")
    stride = _as_tuple(stride, rank)
    pad = _as_tuple(pad, rank)
    dilation = _as_tuple(dilation, rank)

    cols = _im2col(x, ksize, stride, pad, dilation)
    out_sp = cols.shape[2:2 + rank]
    pos = int(np.prod(out_sp))
    kk = int(np.prod(ksize))
    acc = _acc_dtype(x.dtype)

    # [N, G, Cg, P, KK] -> [G, N*P, Cg*KK]
    cols = cols.reshape(n, groups, cg, pos, kk)
    cols = cols.transpose(1, 0, 3, 2, 4).reshape(groups, n * pos, cg * kk)
    wg = w.reshape(groups, cout // groups, cg * kk).transpose(0, 2, 1)
    out = np.matmul(cols.astype(acc, copy=False), wg.astype(acc, copy=False))
    _record_macs(n * pos * cout * cg * kk)
    # [G, N*P, Coutg] -> [N, Cout, *O]
    out = out.reshape(groups, n, pos, cout // groups).transpose(1, 0, 3, 2)
    out = out.reshape(n, cout, *out_sp)
    if bias is not None:
        out = out + bias.astype(acc).reshape((1, cout) + (1,) * rank)
    return np.ascontiguousarray(out.astype(x.dtype, copy=False))


def conv_nd_vjp_w(x, gout, ksize, stride, pad, dilation, groups):
    """Gradient of conv_nd w.r.t. the kernel."""
    rank = x.ndim - 2
    n, cin = x.shape[:2]
    cout = gout.shape[1]
    stride = _as_tuple(stride, rank)
    pad = _as_tuple(pad, rank)
    dilation = _as_tuple(dilation, rank)
    cg = cin // groups
    cols = _im2col(x, ksize, stride, pad, dilation)
    pos = int(np.prod(cols.shape[2:2 + rank]))
    kk = int(np.prod(ksize))
    acc = _acc_dtype(x.dtype)
    cols = cols.reshape(n, groups, cg, pos, kk)
    cols = cols.transpose(1, 2, 4, 0, 3).reshape(groups, cg * kk, n * pos)
    g = gout.reshape(n, groups, cout // groups, pos)
    g = g.transpose(1, 0, 3, 2).reshape(groups, n * pos, cout // groups)
    gw = np.matmul(cols.astype(acc, copy=False), g.astype(acc, copy=False))
    # [G, Cg*KK, Coutg] -> [Cout, Cg, *K]
    gw = gw.transpose(0, 2, 1).reshape(cout, cg, *ksize)
    return gw.astype(x.dtype, copy=False)


def conv_nd_vjp_x(gout, w, in_spatial, stride, pad, dilation, groups):
    """Gradient of conv_nd w.r.t. the input (scatter of kernel taps)."""
    rank = gout.ndim - 2
    n = gout.shape[0]
    cout, cg = w.shape[:2]
    cin = cg * groups
    ksize = w.shape[2:]
    stride = _as_tuple(stride, rank)
    pad = _as_tuple(pad, rank)
    dilation = _as_tuple(dilation, rank)
    out_sp = gout.shape[2:]
    acc = _acc_dtype(gout.dtype)

    # dcols[g, n*p, cg*kk] = gout @ w^T
    pos = int(np.prod(out_sp))
    kk = int(np.prod(ksize))
    g = gout.reshape(n, groups, cout // groups, pos)
    g = g.transpose(1, 0, 3, 2).reshape(groups, n * pos, cout // groups)
    wg = w.reshape(groups, cout // groups, cg * kk)
    dcols = np.matmul(g.astype(acc, copy=False), wg.astype(acc, copy=False))
    dcols = dcols.reshape(groups, n, pos, cg, kk)
    dcols = dcols.transpose(1, 0, 3, 2, 4).reshape(n, cin, *out_sp, *ksize)

    padded = tuple(s + 2 * p for s, p in zip(in_spatial, pad))
    gx = np.zeros((n, cin) + padded, dtype=acc)
    # scatter one kernel tap at a time; strided slices of a fixed tap never
    # overlap, so plain += is safe and deterministic
    for tap in np.ndindex(*ksize):
        sel = (slice(None), slice(None))
        sel += tuple(slice(t * d, t * d + s * o, s)
                     for t, d, s, o in zip(tap, dilation, stride, out_sp))
        gx[sel] += dcols[(Ellipsis,) + tap]
    unpad = (slice(None), slice(None))
    unpad += tuple(slice(p, p + s) for p, s in zip(pad, in_spatial))
    return np.ascontiguousarray(gx[unpad]).astype(gout.dtype, copy=False)


# ---------------------------------------------------------------------------
# zero-stuffing (transposed convolution support)
# ---------------------------------------------------------------------------

def zero_stuff(x, stride, output_padding):
    """Insert stride-1 zeros between spatial samples, plus trailing zeros."""
    rank = x.ndim - 2
    stride = _as_tuple(stride, rank)
    output_padding = _as_tuple(output_padding, rank)
    for s, op in zip(stride, output_padding):
        check(op < s, f"output_padding {op} must be smaller than stride {s}")
    if all(s == 1 for s in stride) and all(p == 0 for p in output_padding):
        return x
    sp = tuple((e - 1) * s + 1 + op
               for e, s, op in zip(x.shape[2:], stride, output_padding))
    out = np.zeros(x.shape[:2] + sp, dtype=x.dtype)
    sel = (slice(None), slice(None))
    sel += tuple(slice(None, (e - 1) * s + 1, s) for e, s in zip(x.shape[2:], stride))
    out[sel] = x
    return out


def zero_stuff_vjp(g, stride, in_spatial):
    rank = g.ndim - 2
    stride = _as_tuple(stride, rank)
    sel = (slice(None), slice(None))
    sel += tuple(slice(None, (e - 1) * s + 1, s) for e, s in zip(in_spatial, stride))
    return np.ascontiguousarray(g[sel])


def flip_kernel_for_transpose(w, groups):
    """Rearrange a transposed-conv kernel [Cin, Cout/g, *K] into the layout of
    the equivalent ordinary convolution [Cout, Cin/g, *K] (taps flipped)."""
    rank = w.ndim - 2
    cin, coutg = w.shape[:2]
    cg = cin // groups
    wf = w.reshape(groups, cg, coutg, *w.shape[2:])
    wf = np.flip(wf, axis=tuple(range(3, 3 + rank)))
    wf = wf.transpose(0, 2, 1, *range(3, 3 + rank))
    return np.ascontiguousarray(wf.reshape(groups * coutg, cg, *w.shape[2:]))


def unflip_kernel_grad(gw, groups, cin):
    """Inverse of :func:`flip_kernel_for_transpose` applied to a gradient."""
    rank = gw.ndim - 2
    cout = gw.shape[0]
    coutg = cout // groups
    cg = cin // groups
    g = gw.reshape(groups, coutg, cg, *gw.shape[2:])
    g = g.transpose(0, 2, 1, *range(3, 3 + rank))
    g = np.flip(g, axis=tuple(range(3, 3 + rank)))
    return np.ascontiguousarray(g.reshape(cin, coutg, *gw.shape[2:]))


# ---------------------------------------------------------------------------
# linear interpolation (align_corners = False)
# ---------------------------------------------------------------------------

def interp_axis_weights(in_size, out_size, scale):
    """Source indices and weights for 1-D linear resampling of one axis."""
    dst = np.arange(out_size, dtype=np.float64)
    src = (dst + 0.5) / scale - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    i0 = np.floor(src).astype(np.int64)
    i0 = np.minimum(i0, in_size - 1)
    i1 = np.minimum(i0 + 1, in_size - 1)
    w1 = src - i0
    return i0, i1, 1.0 - w1, w1


def interp_nd(x, scales):
    """Bi/trilinear resize of the spatial axes by per-axis scale factors."""
    rank = x.ndim - 2
    scales = tuple(float(s) for s in (scales if not np.isscalar(scales)
                                      else (scales,) * rank))
    check(len(scales) == rank, f"expected {rank} scale factors")
    check(all(s > 0 for s in scales), "scale factors must be positive")
    out = x
    for ax in range(rank):
        in_size = out.shape[2 + ax]
        out_size = int(np.floor(in_size * scales[ax]))
        check(out_size >= 1, f"axis {ax}: output extent collapsed to zero")
        i0, i1, w0, w1 = interp_axis_weights(in_size, out_size, scales[ax])
        shape = [1] * out.ndim
        shape[2 + ax] = out_size
        w0 = w0.reshape(shape).astype(out.dtype)
        w1 = w1.reshape(shape).astype(out.dtype)
        out = np.take(out, i0, axis=2 + ax) * w0 + np.take(out, i1, axis=2 + ax) * w1
    return out


def interp_nd_vjp(g, in_spatial, scales):
    rank = g.ndim - 2
    scales = tuple(float(s) for s in (scales if not np.isscalar(scales)
                                      else (scales,) * rank))
    out = g
    # undo axes in reverse order
    for ax in reversed(range(rank)):
        in_size = in_spatial[ax]
        out_size = out.shape[2 + ax]
        i0, i1, w0, w1 = interp_axis_weights(in_size, out_size, scales[ax])
        shape = [1] * out.ndim
        shape[2 + ax] = out_size
        w0 = w0.reshape(shape).astype(out.dtype)
        w1 = w1.reshape(shape).astype(out.dtype)
        acc_shape = list(out.shape)
        acc_shape[2 + ax] = in_size
        acc = np.zeros(acc_shape, dtype=out.dtype)
        moved = np.moveaxis(acc, 2 + ax, 0)
        np.add.at(moved, i0, np.moveaxis(out * w0, 2 + ax, 0))
        np.add.at(moved, i1, np.moveaxis(out * w1, 2 + ax, 0))
        out = acc
    return out
