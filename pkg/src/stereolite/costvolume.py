"""Left/right feature aggregation: correlation, concatenation, group-wise
correlation, and the learnable interlaced volume.

All constructors traverse the right feature map by disparity level
(out-of-range columns are zero-filled), leave the spatial resolution
unchanged, and are differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import check
from .module import BatchNorm, Conv, Module
from .tensor import Tensor, as_tensor, concat, interlace, pad_zero, relu, stack


def shift_right(f, d):
    """Traverse a feature map by disparity d: out(x) = f(x-d), zero for x<d.

    A shift at or beyond the width leaves no columns in range and yields an
    all-zero map (narrow inputs can still probe a wide disparity range)."""
    f = as_tensor(f)
    w = f.shape[-1]
    check(d >= 0, f"negative disparity {d}")
    if d == 0:
        return f
    if d >= w:
        return as_tensor(np.zeros(f.shape, dtype=f.dtype))
    trimmed = f[..., : w - d]
    width = [(0, 0)] * (f.ndim - 1) + [(d, 0)]
    return pad_zero(trimmed, width)


def _check_pair(left, right):
    left, right = as_tensor(left), as_tensor(right)
    check(left.shape == right.shape,
          f"left/right features differ in shape: {left.shape} vs {right.shape}")
    return left, right


def correlation_volume(left, right, num_disparities):
    """Channel-mean dot product per disparity level -> [N, D, H, W]."""
    left, right = _check_pair(left, right)
    planes = [(left * shift_right(right, d)).mean(axis=1)
              for d in range(num_disparities)]
    return stack(planes, axis=1)


def concat_volume(left, right, num_disparities):
    """Concatenated unary features per disparity level -> [N, 2C, D, H, W]."""
    left, right = _check_pair(left, right)
    slabs = [concat([left, shift_right(right, d)], axis=1)
             for d in range(num_disparities)]
    return stack(slabs, axis=2)


def gwc_volume(left, right, num_disparities, num_groups):
    """Group-wise correlation -> [N, Ng, D, H, W]."""
    left, right = _check_pair(left, right)
    n, c = left.shape[:2]
    check(c % num_groups == 0,
          f"groups {num_groups} do not divide channel count {c}")
    spatial = left.shape[2:]
    slabs = []
    for d in range(num_disparities):
        prod = left * shift_right(right, d)
        grouped = prod.reshape((n, num_groups, c // num_groups) + spatial)
        slabs.append(grouped.mean(axis=2))
    return stack(slabs, axis=2)


@dataclass
class InterlaceSpec:
    """Configuration of the learnable aggregation stack.

    The first 3D layer reads non-overlapping interlaced channel groups: its
    kernel depth and depth stride are both 2i, so one kernel spans i channels
    from each view.  The following layers keep kernel depth equal to depth
    stride; together the strides collapse depth 2C to 1.  The final 2D conv
    maps the remaining channels to a single score per pixel.
    """

    i: int
    f1: int
    f2: int
    f3: int
    m1: int
    m2: int
    m3: int
    final_k: int = 3

    def __post_init__(self):
        check(self.m1 == 2 * self.i,
              "first-layer depth stride must equal 2*i (non-overlapping "
              "interlaced groups)")
        check(self.f2 == 2 * self.f1 and self.f3 == self.f1,
              "layer widths must follow (F, 2F, F)")

    def validate_channels(self, c):
        check(c % self.i == 0, f"group size {self.i} does not divide "
                               f"channel count {c}")
        check(self.m1 * self.m2 * self.m3 == 2 * c,
              f"depth strides {self.m1}x{self.m2}x{self.m3} do not reduce "
              f"depth {2 * c} to 1")

    @classmethod
    def default_for(cls, channels, i):
        """Three-layer stack whose strides exactly consume depth 2C."""
        m1 = 2 * i
        rest = (2 * channels) // m1
        check(m1 * rest == 2 * channels,
              f"2*i={m1} does not divide doubled channels {2 * channels}")
        m3 = 2 if rest % 2 == 0 and rest >= 2 else 1
        m2 = rest // m3
        check(m2 * m3 == rest, "cannot factor remaining depth reduction")
        f1 = max(channels // 2, 2)
        return cls(i=i, f1=f1, f2=2 * f1, f3=f1, m1=m1, m2=m2, m3=m3)


class InterlacedVolume(Module):
    """Parameterized cost volume: interlace the two views per disparity level,
    lift to a single-feature 4D slab, run the shared 3D conv stack until the
    depth axis is squeezed to 1, and finish with one 2D convolution.

    The same weights serve every disparity level; output is [N, D, H, W].
    ``order='concatenated'`` stacks left then right channels instead of
    interleaving them (ablation mode).
    """

    def __init__(self, rng, channels, spec: InterlaceSpec, order="interlaced"):
        super().__init__()
        check(order in ("interlaced", "concatenated"),
              f"unknown channel order {order!r}")
        spec.validate_channels(channels)
        self.spec = spec
        self.order = order
        self.channels = channels
        self.conv1 = Conv(rng, 1, spec.f1, (spec.m1, 3, 3), 3,
                          stride=(spec.m1, 1, 1), padding=(0, 1, 1))
        self.bn1 = BatchNorm(spec.f1)
        self.conv2 = Conv(rng, spec.f1, spec.f2, (spec.m2, 3, 3), 3,
                          stride=(spec.m2, 1, 1), padding=(0, 1, 1))
        self.bn2 = BatchNorm(spec.f2)
        self.conv3 = Conv(rng, spec.f2, spec.f3, (spec.m3, 3, 3), 3,
                          stride=(spec.m3, 1, 1), padding=(0, 1, 1))
        self.bn3 = BatchNorm(spec.f3)
        self.final = Conv(rng, spec.f3, 1, spec.final_k, 2,
                          padding=spec.final_k // 2)

    def aggregate(self, left, right, d):
        """Score one disparity level -> [N, H, W]."""
        n, c = left.shape[:2]
        h, w = left.shape[2:]
        shifted = shift_right(right, d)
        if self.order == "interlaced":
            merged = interlace(left, shifted, axis=1)
        else:
            merged = concat([left, shifted], axis=1)
        slab = merged.reshape((n, 1, 2 * c, h, w))
        out = relu(self.bn1(self.conv1(slab)))
        out = relu(self.bn2(self.conv2(out)))
        out = relu(self.bn3(self.conv3(out)))
        out = out.reshape((n, self.spec.f3, h, w))
        return self.final(out).reshape((n, h, w))

    def forward(self, left, right, num_disparities):
        left, right = _check_pair(left, right)
        check(left.shape[1] == self.channels,
              f"expected {self.channels} feature channels, got {left.shape[1]}")
        planes = [self.aggregate(left, right, d)
                  for d in range(num_disparities)]
        return stack(planes, axis=1)
