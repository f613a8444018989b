"""Full stereo architectures: shared backbone, channel reduction, cost volume,
pre-hourglass, stacked hourglasses, prediction heads, disparity regression and
the training loss.

Two families exist, selected by ``ModelConfig.variant``: models whose
encoder-decoder runs 2D convolutions over a [D,H,W] volume, and models whose
encoder-decoder runs 3D convolutions over a [G,D,H,W] volume.  The light
variants substitute v1/v2 blocks at fixed sites; the baselines keep standard
convolutions and a single hourglass.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import costvolume as cv
from .blocks import BasicBlock, Hourglass, HourglassSpec, make_unit
from .functional import interpolate, smooth_l1, softmax
from .kernels import check, mac_scope
from .module import BatchNorm, Conv, Module
from .tensor import Tensor, as_tensor, concat, relu, sum_

VARIANTS = ("baseline2d", "baseline3d", "mobile2d", "mobile3d", "micro")


@dataclass
class ModelConfig:
    """Complete architecture description; presets pin the published variants."""

    variant: str
    d_max: int = 192
    num_hourglasses: int = 3
    hourglass_width: int = 32
    base_width: int = 32                  # backbone stage unit (stages 1x,2x,4x,4x)
    stage_blocks: tuple = (3, 16, 3, 3)
    reduction_channels: tuple = (256, 128, 64, 32)
    first_conv_kind: str = "std"          # std | v2 (t=3)
    backbone_kind: str = "std"            # std | v1 | v2
    pre_hourglass_kind: str = "std"       # std | v2 (t=3)
    hourglass_kind: str = "std"           # std | v1 | v2 (t=2)
    first_conv_t: int = 3
    pre_hourglass_t: int = 3
    hourglass_t: int = 2
    cost_volume: str = "gwc"              # interlaced | concat-order ablation | gwc | correlation
    num_groups: int = 40
    interlace_i: int = 4
    interlace_order: str = "interlaced"
    aux_weights: tuple = (0.5, 0.7, 1.0)

    def __post_init__(self):
        check(self.variant in VARIANTS, f"unknown variant {self.variant!r}")
        check(self.d_max % 4 == 0, "d_max must be divisible by 4")

    @property
    def rank(self):
        return "3d" if self.variant in ("baseline3d", "mobile3d") else "2d"

    @property
    def num_disparities(self):
        return self.d_max // 4

    @property
    def feature_channels(self):
        # concat of the last three backbone stages
        return self.base_width * (2 + 4 + 4)

    @property
    def unary_channels(self):
        """Channels entering the cost volume constructor."""
        if self.rank == "2d":
            return self.reduction_channels[-1]
        return self.feature_channels

    @classmethod
    def preset(cls, name):
        if name == "baseline2d":
            return cls(variant=name, num_hourglasses=1, hourglass_width=48,
                       cost_volume="interlaced")
        if name == "baseline3d":
            return cls(variant=name, num_hourglasses=1, hourglass_width=32,
                       cost_volume="gwc")
        if name == "mobile2d":
            return cls(variant=name, num_hourglasses=3, hourglass_width=48,
                       cost_volume="interlaced", first_conv_kind="v2",
                       backbone_kind="v1", pre_hourglass_kind="v2",
                       hourglass_kind="v2")
        if name == "mobile3d":
            return cls(variant=name, num_hourglasses=3, hourglass_width=32,
                       cost_volume="gwc", first_conv_kind="v2",
                       backbone_kind="v1", pre_hourglass_kind="v2",
                       hourglass_kind="v2")
        if name == "micro":
            # 1/8-width backbone, d_max 24, one hourglass: small enough for
            # finite-difference checks and toy overfitting
            return cls(variant=name, d_max=24, num_hourglasses=1,
                       hourglass_width=6, base_width=4,
                       reduction_channels=(32, 16, 8, 4),
                       cost_volume="interlaced", first_conv_kind="v2",
                       backbone_kind="v1", pre_hourglass_kind="v2",
                       hourglass_kind="v2", interlace_i=2,
                       aux_weights=(1.0,))
        raise ValueError(f"unknown preset {name!r}")


@dataclass
class DisparityMap:
    """Per-pixel disparity in pixels with a validity mask."""

    values: np.ndarray                      # [N, H, W]
    valid_mask: np.ndarray = None           # bool [N, H, W]

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.valid_mask is None:
            self.valid_mask = np.ones(self.values.shape, dtype=bool)
        check(self.valid_mask.shape == self.values.shape,
              "validity mask shape differs from disparity shape")


class FeatureExtraction(Module):
    """Shared ResNet-style backbone -> [N, 10*base, H/4, W/4].

    Three initial 3x3 convs (first at stride 2), then four residual stages:
    base channels at stride 1, 2*base at stride 2 (16 blocks), and two
    dilated 4*base stages whose outputs are concatenated with the second
    stage's.
    """

    def __init__(self, rng, config: ModelConfig):
        super().__init__()
        b = config.base_width
        fk = config.first_conv_kind
        ft = config.first_conv_t
        self.first = [
            make_unit(rng, fk, "2d", 3, b, 3, stride=2, t=ft),
            make_unit(rng, fk, "2d", b, b, 3, t=ft),
            make_unit(rng, fk, "2d", b, b, 3, t=ft),
        ]
        kind = config.backbone_kind
        n1, n2, n3, n4 = config.stage_blocks

        def stage(count, cin, cout, stride, dilation):
            blocks = [BasicBlock(rng, cin, cout, stride, dilation, kind)]
            blocks += [BasicBlock(rng, cout, cout, 1, dilation, kind)
                       for _ in range(count - 1)]
            return blocks

        self.stage1 = stage(n1, b, b, 1, 1)
        self.stage2 = stage(n2, b, 2 * b, 2, 1)
        self.stage3 = stage(n3, 2 * b, 4 * b, 1, 1)
        self.stage4 = stage(n4, 4 * b, 4 * b, 1, 2)

    def forward(self, x):
        check(x.shape[1] == 3, f"expected RGB input, got {x.shape[1]} channels")
        for unit in self.first:
            x = unit(x)
        for blk in self.stage1:
            x = blk(x)
        for blk in self.stage2:
            x = blk(x)
        s2 = x
        for blk in self.stage3:
            x = blk(x)
        s3 = x
        for blk in self.stage4:
            x = blk(x)
        return concat([s2, s3, x], axis=1)


class ChannelReduction(Module):
    """Successive pointwise convolutions squeezing the concatenated features;
    always standard convolutions."""

    def __init__(self, rng, cin, channels):
        super().__init__()
        self.units = []
        for cout in channels:
            self.units.append(make_unit(rng, "std", "2d", cin, cout, k=1))
            cin = cout
        self.cin = self.units[0].conv.weight.shape[1]

    def forward(self, x):
        check(x.shape[1] == self.cin,
              f"channel reduction expects {self.cin} channels, got {x.shape[1]}")
        for u in self.units:
            x = u(x)
        return x


class PreHourglass(Module):
    """Two blocks of two conv units each in front of the hourglass stack;
    the second block carries a residual connection."""

    def __init__(self, rng, rank, cin, width, kind, t):
        super().__init__()
        self.a1 = make_unit(rng, kind, rank, cin, width, t=t)
        self.a2 = make_unit(rng, kind, rank, width, width, t=t)
        self.b1 = make_unit(rng, kind, rank, width, width, t=t)
        self.b2 = make_unit(rng, kind, rank, width, width, t=t)

    def forward(self, x):
        x = self.a2(self.a1(x))
        return self.b2(self.b1(x)) + x


class PredictionHead(Module):
    """Conv unit followed by a plain conv with bias emitting per-disparity
    logits (to channel count D/4 in 2D; to a single squeezed channel in 3D)."""

    def __init__(self, rng, rank, width, num_disparities):
        super().__init__()
        self.rank = rank
        if rank == "2d":
            check(width == num_disparities,
                  "2D head needs hourglass width == disparity levels")
            self.unit = make_unit(rng, "std", rank, width, width)
            self.final = Conv(rng, width, num_disparities, 3, 2, padding=1,
                              bias=True)
        else:
            self.unit = make_unit(rng, "std", rank, width, width)
            self.final = Conv(rng, width, 1, 3, 3, padding=1, bias=True)

    def forward(self, x):
        out = self.final(self.unit(x))
        if self.rank == "3d":
            n, _, d, h, w = out.shape
            out = out.reshape((n, d, h, w))
        return out


def disparity_regression(logits):
    """Soft-argmin: softmax over the disparity axis, then expectation."""
    p = softmax(logits, axis=1)
    levels = np.arange(logits.shape[1], dtype=p.dtype).reshape(1, -1, 1, 1)
    return sum_(p * Tensor(levels), axis=1)


class StereoModel(Module):
    """End-to-end disparity network assembled from a :class:`ModelConfig`."""

    def __init__(self, config: ModelConfig, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.config = config
        self.features = FeatureExtraction(rng, config)
        rank = config.rank
        width = config.hourglass_width
        if rank == "2d":
            self.reduce = ChannelReduction(rng, config.feature_channels,
                                           config.reduction_channels)
            c = config.unary_channels
            if config.cost_volume in ("interlaced", "concat-order"):
                spec = cv.InterlaceSpec.default_for(c, config.interlace_i)
                self.volume = cv.InterlacedVolume(rng, c, spec,
                                                  config.interlace_order)
            else:
                check(config.cost_volume == "correlation",
                      f"2D path cannot use volume {config.cost_volume!r}")
                self.volume = None
            pre_cin = config.num_disparities
        else:
            self.reduce = None
            self.volume = None
            check(config.cost_volume == "gwc",
                  f"3D path expects the group-wise volume, "
                  f"got {config.cost_volume!r}")
            check(config.feature_channels % config.num_groups == 0,
                  "group count does not divide feature channels")
            pre_cin = config.num_groups
        self.pre = PreHourglass(rng, rank, pre_cin, width,
                                config.pre_hourglass_kind,
                                config.pre_hourglass_t)
        hg_spec = HourglassSpec(rank, width, config.hourglass_kind,
                                config.hourglass_t)
        self.hourglasses = [Hourglass(rng, hg_spec)
                            for _ in range(config.num_hourglasses)]
        self.heads = [PredictionHead(rng, rank, width, config.num_disparities)
                      for _ in range(config.num_hourglasses)]

    # -- pieces ---------------------------------------------------------------

    def extract_features(self, img):
        img = as_tensor(img)
        check(img.ndim == 4, f"image tensor must be [N,3,H,W], got rank {img.ndim}")
        for ax, e in enumerate(img.shape[2:]):
            check(e % 4 == 0, f"spatial axis {ax}: extent {e} not divisible by 4")
        with mac_scope("feature_extraction"):
            return self.features(img)

    def build_volume(self, fl, fr):
        cfg = self.config
        d = cfg.num_disparities
        with mac_scope("cost_volume"):
            if cfg.rank == "3d":
                return cv.gwc_volume(fl, fr, d, cfg.num_groups)
            if self.volume is not None:
                return self.volume(fl, fr, d)
            return cv.correlation_volume(fl, fr, d)

    def logits_per_stack(self, left, right, train):
        """Run the network up to the per-hourglass logit volumes."""
        check(left.shape == right.shape,
              f"left/right image shapes differ: {left.shape} vs {right.shape}")
        fl = self.extract_features(left)
        fr = self.extract_features(right)
        if self.reduce is not None:
            with mac_scope("channel_reduction"):
                fl = self.reduce(fl)
                fr = self.reduce(fr)
        volume = self.build_volume(fl, fr)
        with mac_scope("pre_hourglass"):
            out = self.pre(volume)
        logits = []
        for i, hg in enumerate(self.hourglasses):
            out = hg(out)
            last = i == len(self.hourglasses) - 1
            if train or last:
                with mac_scope("heads"):
                    logits.append(self.heads[i](out))
        return logits

    def forward(self, left, right, train=None):
        """Predict full-resolution disparity; one map per hourglass when
        training, only the final map in eval mode."""
        train = self.training if train is None else train
        maps = []
        for logit in self.logits_per_stack(left, right, train):
            quarter = disparity_regression(logit) * 4.0
            n, h, w = quarter.shape
            lifted = quarter.reshape((n, 1, h, w))
            full = interpolate(lifted, 4.0, "bilinear")
            maps.append(full.reshape((n, 4 * h, 4 * w)))
        return maps if train else maps[-1]

    def predict(self, left, right):
        """Eval-mode forward returning a :class:`DisparityMap`."""
        from .tensor import no_grad
        with no_grad():
            out = self.forward(left, right, train=False)
        return DisparityMap(out.data)


def training_loss(maps, gt: DisparityMap, aux_weights):
    """Weighted smooth-L1 over the per-hourglass maps, valid pixels only."""
    check(len(maps) == len(aux_weights),
          f"{len(maps)} predictions but {len(aux_weights)} loss weights")
    total = None
    for m, w in zip(maps, aux_weights):
        term = smooth_l1(m, gt.values, gt.valid_mask) * float(w)
        total = term if total is None else total + term
    return total
