"""Building blocks: depthwise-separable (v1), inverted-residual (v2) and
standard conv units in 2D and 3D, the ResNet-style basic block, and the
encoder-decoder hourglass.

Every "conv unit" preserves spatial extent at stride 1 (padding =
dilation*(k-1)/2) and can be realized as a standard convolution, a v1 block
or a v2 block, which is how the light model variants swap computation in
without changing wiring.
"""

from __future__ import annotations

from dataclasses import dataclass

from .kernels import check, mac_scope
from .module import BatchNorm, Conv, ConvTransposed, Module
from .tensor import relu

_RANKS = {"2d": 2, "3d": 3}


@dataclass
class BlockSpec:
    kind: str            # std_conv | v1 | v2 | residual_basic
    rank: str            # 2d | 3d
    c_in: int
    c_out: int
    k: int = 3
    stride: int = 1
    t: int = 1           # expansion factor, v2 only
    dilation: int = 1

    def __post_init__(self):
        check(self.rank in _RANKS, f"unknown rank {self.rank!r}")
        check(self.t >= 1, "expansion factor must be >= 1")

    @property
    def spatial_rank(self):
        return _RANKS[self.rank]

    @property
    def has_residual(self):
        return self.kind == "v2" and self.stride == 1 and self.c_in == self.c_out


@dataclass
class HourglassSpec:
    rank: str
    width: int
    kind: str = "std_conv"   # unit kind for the non-transposed convs
    t: int = 2

    def __post_init__(self):
        check(self.width > 0, "hourglass width must be positive")
        check(self.rank in _RANKS, f"unknown rank {self.rank!r}")


def _same_pad(k, dilation):
    return dilation * (k - 1) // 2


class StdUnit(Module):
    """conv(k) -> BN -> optional ReLU."""

    def __init__(self, rng, rank, cin, cout, k=3, stride=1, dilation=1,
                 relu_out=True):
        super().__init__()
        self.conv = Conv(rng, cin, cout, k, rank, stride,
                         _same_pad(k, dilation), dilation)
        self.bn = BatchNorm(cout)
        self.relu_out = relu_out

    def forward(self, x):
        out = self.bn(self.conv(x))
        return relu(out) if self.relu_out else out


class V1Block(Module):
    """Depthwise k-conv -> BN -> ReLU -> pointwise conv -> BN -> ReLU."""

    def __init__(self, rng, rank, cin, cout, k=3, stride=1, dilation=1,
                 relu_out=True):
        super().__init__()
        self.dw = Conv(rng, cin, cin, k, rank, stride,
                       _same_pad(k, dilation), dilation, groups=cin)
        self.bn_dw = BatchNorm(cin)
        self.pw = Conv(rng, cin, cout, 1, rank)
        self.bn_pw = BatchNorm(cout)
        self.relu_out = relu_out

    def forward(self, x):
        out = relu(self.bn_dw(self.dw(x)))
        out = self.bn_pw(self.pw(out))
        return relu(out) if self.relu_out else out


class V2Block(Module):
    """Inverted residual: pointwise expansion by t, depthwise k-conv,
    pointwise projection; skip connection iff stride=1 and c_in=c_out."""

    def __init__(self, rng, rank, cin, cout, k=3, stride=1, dilation=1, t=2):
        super().__init__()
        mid = t * cin
        self.expand = Conv(rng, cin, mid, 1, rank)
        self.bn_expand = BatchNorm(mid)
        self.dw = Conv(rng, mid, mid, k, rank, stride,
                       _same_pad(k, dilation), dilation, groups=mid)
        self.bn_dw = BatchNorm(mid)
        self.project = Conv(rng, mid, cout, 1, rank)
        self.bn_project = BatchNorm(cout)
        self.residual = stride == 1 and cin == cout

    def forward(self, x):
        out = relu(self.bn_expand(self.expand(x)))
        out = relu(self.bn_dw(self.dw(out)))
        out = self.bn_project(self.project(out))
        return out + x if self.residual else out


def make_unit(rng, kind, rank, cin, cout, k=3, stride=1, dilation=1, t=2,
              relu_out=True):
    """One conv unit of the requested kind; v2 ignores ``relu_out`` (an
    inverted residual never activates after projection)."""
    r = _RANKS[rank]
    if kind in ("std", "std_conv"):
        return StdUnit(rng, r, cin, cout, k, stride, dilation, relu_out)
    if kind == "v1":
        return V1Block(rng, r, cin, cout, k, stride, dilation, relu_out)
    if kind == "v2":
        return V2Block(rng, r, cin, cout, k, stride, dilation, t)
    raise ValueError(f"unknown block kind {kind!r}")


def build_block(rng, spec: BlockSpec):
    if spec.kind == "residual_basic":
        return BasicBlock(rng, spec.c_in, spec.c_out, spec.stride,
                          spec.dilation)
    return make_unit(rng, spec.kind, spec.rank, spec.c_in, spec.c_out, spec.k,
                     spec.stride, spec.dilation, spec.t)


class BasicBlock(Module):
    """Two 3x3 convolutions with a residual connection (2D only).

    The inner convolutions are swappable for v1 blocks in the light variants;
    the 1x1 projection on the skip path stays standard.
    """

    def __init__(self, rng, cin, cout, stride=1, dilation=1, conv_kind="std"):
        super().__init__()
        self.unit1 = make_unit(rng, conv_kind, "2d", cin, cout, 3, stride,
                               dilation)
        self.unit2 = make_unit(rng, conv_kind, "2d", cout, cout, 3, 1,
                               dilation, relu_out=False)
        if stride != 1 or cin != cout:
            self.skip_conv = Conv(rng, cin, cout, 1, 2, stride)
            self.skip_bn = BatchNorm(cout)
        else:
            self.skip_conv = None
            self.skip_bn = None

    def forward(self, x):
        out = self.unit2(self.unit1(x))
        skip = x if self.skip_conv is None else self.skip_bn(self.skip_conv(x))
        return relu(out + skip)


class Hourglass(Module):
    """Symmetric encoder-decoder over one cost volume.

    Encoder: stride-2 unit to 2w, unit at 2w, stride-2 unit to 4w, unit at 4w.
    Decoder: transposed conv back to 2w (skip from the 2w stage), transposed
    conv back to w (skip from the input), ReLU after each additive skip.  The
    transposed convolutions stay standard in every variant; only the forward
    units take the configured block kind.
    """

    def __init__(self, rng, spec: HourglassSpec):
        super().__init__()
        r = _RANKS[spec.rank]
        w = spec.width
        kw = dict(t=spec.t)
        self.spec = spec
        self.down1 = make_unit(rng, spec.kind, spec.rank, w, 2 * w, 3, 2, **kw)
        self.mid1 = make_unit(rng, spec.kind, spec.rank, 2 * w, 2 * w, 3, 1, **kw)
        self.down2 = make_unit(rng, spec.kind, spec.rank, 2 * w, 4 * w, 3, 2, **kw)
        self.mid2 = make_unit(rng, spec.kind, spec.rank, 4 * w, 4 * w, 3, 1, **kw)
        self.up1 = ConvTransposed(rng, 4 * w, 2 * w, 3, r, stride=2, padding=1,
                                  output_padding=1)
        self.up1_bn = BatchNorm(2 * w)
        self.up2 = ConvTransposed(rng, 2 * w, w, 3, r, stride=2, padding=1,
                                  output_padding=1)
        self.up2_bn = BatchNorm(w)

    def forward(self, x):
        check(x.shape[1] == self.spec.width,
              f"hourglass expects {self.spec.width} input channels, "
              f"got {x.shape[1]}")
        for ax, e in enumerate(x.shape[2:]):
            check(e % 4 == 0,
                  f"spatial axis {ax}: extent {e} cannot round-trip two "
                  f"stride-2 stages")
        with mac_scope("hourglass"):
            enc1 = self.mid1(self.down1(x))
            enc2 = self.mid2(self.down2(enc1))
            dec1 = relu(self.up1_bn(self.up1(enc2)) + enc1)
            dec2 = relu(self.up2_bn(self.up2(dec1)) + x)
        return dec2
