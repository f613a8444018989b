"""Analytical complexity engine: per-block MACs/params formulas, reduction
factors, the expansion-factor sweep, whole-network cost trees, and the
instrumented counter that cross-checks them.

Conventions (they match the instrumented counter exactly):
  - MACs count convolution multiplies only; BN, ReLU, residual additions,
    softmax, interpolation and the unparameterized cost volumes are excluded.
  - A transposed convolution is costed as the equivalent zero-stuffed
    convolution: kernel taps x reduced channels x *output* positions.
  - Params are learnable scalars: conv weights, conv biases and BN affine
    pairs; BN running statistics are excluded.
  - Feature extraction and channel reduction run on both views, so their
    MACs count twice while their (shared) parameters count once.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .blocks import BlockSpec
from .costvolume import InterlaceSpec
from .kernels import check, conv_out_extent
from .network import ModelConfig, StereoModel


@dataclass
class LayerCost:
    """MACs/params record for one layer or module subtree."""

    label: str
    macs: int = 0
    params: int = 0
    children: list = field(default_factory=list)

    def add(self, child):
        self.children.append(child)
        self.macs += child.macs
        self.params += child.params
        return child

    def repeated(self, count, label, note):
        """This subtree applied ``count`` times with shared weights: MACs
        multiply, params count once, and child sums stay exact because the
        extra applications appear as an explicit zero-param sibling."""
        node = LayerCost(label)
        node.add(self)
        if count > 1:
            node.add(LayerCost(f"{note} x{count - 1}",
                               (count - 1) * self.macs, 0))
        return node

    def flatten(self, depth=1):
        """Rows of (label, macs, params) down to the given tree depth."""
        rows = [(self.label, self.macs, self.params)]
        if depth > 0:
            for c in self.children:
                rows += [("  " + lbl, m, p) for lbl, m, p in c.flatten(depth - 1)]
        return rows


# ---------------------------------------------------------------------------
# per-position closed forms
# ---------------------------------------------------------------------------

def per_position_macs(kind, rank, k, cin, cout, t=1):
    """Multiplies per output position for one conv unit."""
    r = 2 if rank == "2d" else 3
    kr = k ** r
    if kind in ("std", "std_conv"):
        return kr * cin * cout
    if kind == "v1":
        return kr * cin + cin * cout
    if kind == "v2":
        return cin * t * cin + kr * t * cin + t * cin * cout
    raise ValueError(f"unknown block kind {kind!r}")


def reduction_factor(std: BlockSpec, light: BlockSpec):
    """Standard-conv MACs over light-block MACs, per output position."""
    check((std.c_in, std.c_out, std.k, std.rank)
          == (light.c_in, light.c_out, light.k, light.rank),
          "reduction factor requires matching channels, kernel and rank")
    num = per_position_macs("std", std.rank, std.k, std.c_in, std.c_out)
    den = per_position_macs(light.kind, light.rank, light.k, light.c_in,
                            light.c_out, light.t)
    return num / den


def v2_reduction_closed_form(c, t, rank):
    """Reduction of a v2 block vs a standard conv for C_in=C_out=C, k=3."""
    kr = 9 if rank == "2d" else 27
    return kr * c / (t * (2 * c + kr))


def expansion_sweep(channels, t_max, rank):
    """(C, t, reduction) rows for t = 1..t_max."""
    rows = []
    for c in channels:
        for t in range(1, t_max + 1):
            rows.append((c, t, v2_reduction_closed_form(c, t, rank)))
    return rows


TABLE1_EXAMPLE = dict(k=3, c_in=32, c_out=64, t=2)


def table1_reduction_factors():
    """The printed example column: (rank, kind) -> reduction factor."""
    out = {}
    for rank in ("2d", "3d"):
        for kind in ("v1", "v2"):
            std = BlockSpec("std_conv", rank, TABLE1_EXAMPLE["c_in"],
                            TABLE1_EXAMPLE["c_out"], TABLE1_EXAMPLE["k"])
            light = BlockSpec(kind, rank, TABLE1_EXAMPLE["c_in"],
                              TABLE1_EXAMPLE["c_out"], TABLE1_EXAMPLE["k"],
                              t=TABLE1_EXAMPLE["t"])
            out[(rank, kind)] = reduction_factor(std, light)
    return out


# ---------------------------------------------------------------------------
# cost atoms
# ---------------------------------------------------------------------------

def conv_atom(label, cin, cout, ksize, positions, groups=1, bias=False,
              bn=True):
    """Cost of one convolution evaluated at ``positions`` output locations."""
    kk = int(np.prod(ksize))
    macs = kk * (cin // groups) * cout * positions
    params = kk * (cin // groups) * cout
    if bias:
        params += cout
    if bn:
        params += 2 * cout
    return LayerCost(label, macs, params)


def bn_atom(label, channels):
    return LayerCost(label, 0, 2 * channels)


def unit_cost(label, kind, rank, cin, cout, k, pos_out, pos_in=None, t=2):
    """One conv unit (std / v1 / v2) with BN affine params included.

    ``pos_in`` matters only for strided v2 units, whose expansion runs at
    input resolution.
    """
    r = 2 if rank == "2d" else 3
    pos_in = pos_out if pos_in is None else pos_in
    node = LayerCost(label)
    if kind in ("std", "std_conv"):
        node.add(conv_atom("conv", cin, cout, (k,) * r, pos_out))
    elif kind == "v1":
        node.add(conv_atom("dw", cin, cin, (k,) * r, pos_out, groups=cin))
        node.add(conv_atom("pw", cin, cout, (1,) * r, pos_out))
    elif kind == "v2":
        mid = t * cin
        node.add(conv_atom("expand", cin, mid, (1,) * r, pos_in))
        node.add(conv_atom("dw", mid, mid, (k,) * r, pos_out, groups=mid))
        node.add(conv_atom("project", mid, cout, (1,) * r, pos_out))
    else:
        raise ValueError(f"unknown block kind {kind!r}")
    return node


def block_cost(spec: BlockSpec, out_extents):
    """Cost of one block evaluated over the given output extents
    ((D,)H,W; the positional factor multiplies every layer)."""
    pos_out = int(np.prod(out_extents))
    pos_in = pos_out * spec.stride ** spec.spatial_rank
    if spec.kind == "residual_basic":
        node = LayerCost("residual_basic")
        node.add(unit_cost("unit1", "std", spec.rank, spec.c_in, spec.c_out,
                           spec.k, pos_out, pos_in))
        node.add(unit_cost("unit2", "std", spec.rank, spec.c_out, spec.c_out,
                           spec.k, pos_out))
        if spec.stride != 1 or spec.c_in != spec.c_out:
            node.add(conv_atom("skip", spec.c_in, spec.c_out,
                               (1,) * spec.spatial_rank, pos_out))
        return node
    return unit_cost(spec.kind, spec.kind, spec.rank, spec.c_in, spec.c_out,
                     spec.k, pos_out, pos_in, spec.t)


# ---------------------------------------------------------------------------
# whole networks
# ---------------------------------------------------------------------------

def _half(e):
    return conv_out_extent(e, 3, 2, 1, 1)


def _feature_extraction_cost(cfg: ModelConfig, h, w):
    b = cfg.base_width
    h2, w2 = _half(h), _half(w)
    h4, w4 = _half(h2), _half(w2)
    p2, p4 = h2 * w2, h4 * w4
    fe = LayerCost("feature_extraction_one_view")
    fk, ft = cfg.first_conv_kind, cfg.first_conv_t
    fe.add(unit_cost("first1", fk, "2d", 3, b, 3, p2, h * w, ft))
    fe.add(unit_cost("first2", fk, "2d", b, b, 3, p2, t=ft))
    fe.add(unit_cost("first3", fk, "2d", b, b, 3, p2, t=ft))

    def basic(label, cin, cout, pos_out, pos_in):
        node = LayerCost(label)
        node.add(unit_cost("unit1", cfg.backbone_kind, "2d", cin, cout, 3,
                           pos_out, pos_in))
        node.add(unit_cost("unit2", cfg.backbone_kind, "2d", cout, cout, 3,
                           pos_out))
        if pos_in != pos_out or cin != cout:
            node.add(conv_atom("skip", cin, cout, (1, 1), pos_out))
        return node

    n1, n2, n3, n4 = cfg.stage_blocks
    stage1 = LayerCost("stage1")
    for i in range(n1):
        stage1.add(basic(f"block{i}", b, b, p2, p2))
    fe.add(stage1)
    stage2 = LayerCost("stage2")
    stage2.add(basic("block0", b, 2 * b, p4, p2))
    for i in range(1, n2):
        stage2.add(basic(f"block{i}", 2 * b, 2 * b, p4, p4))
    fe.add(stage2)
    stage3 = LayerCost("stage3")
    stage3.add(basic("block0", 2 * b, 4 * b, p4, p4))
    for i in range(1, n3):
        stage3.add(basic(f"block{i}", 4 * b, 4 * b, p4, p4))
    fe.add(stage3)
    stage4 = LayerCost("stage4")
    for i in range(n4):
        stage4.add(basic(f"block{i}", 4 * b, 4 * b, p4, p4))
    fe.add(stage4)
    return fe


def _interlaced_cost(cfg: ModelConfig, spec: InterlaceSpec, h4, w4):
    c = cfg.unary_channels
    p = h4 * w4
    per_level = LayerCost("per_level")
    d1 = 2 * c // spec.m1
    d2 = d1 // spec.m2
    d3 = d2 // spec.m3
    per_level.add(conv_atom("layer1", 1, spec.f1, (spec.m1, 3, 3), d1 * p))
    per_level.add(conv_atom("layer2", spec.f1, spec.f2, (spec.m2, 3, 3), d2 * p))
    per_level.add(conv_atom("layer3", spec.f2, spec.f3, (spec.m3, 3, 3), d3 * p))
    per_level.add(conv_atom("final2d", spec.f3, 1, (spec.final_k,) * 2, p,
                            bn=False))
    # shared weights applied once per disparity level
    return per_level.repeated(cfg.num_disparities, "cost_volume",
                              "further disparity levels")


def _hourglass_cost(cfg: ModelConfig, pos0):
    r = 2 if cfg.rank == "2d" else 3
    w = cfg.hourglass_width
    pos1 = pos0 // 2 ** r
    pos2 = pos1 // 2 ** r
    kind, t = cfg.hourglass_kind, cfg.hourglass_t
    hg = LayerCost("hourglass")
    hg.add(unit_cost("down1", kind, cfg.rank, w, 2 * w, 3, pos1, pos0, t))
    hg.add(unit_cost("mid1", kind, cfg.rank, 2 * w, 2 * w, 3, pos1, t=t))
    hg.add(unit_cost("down2", kind, cfg.rank, 2 * w, 4 * w, 3, pos2, pos1, t))
    hg.add(unit_cost("mid2", kind, cfg.rank, 4 * w, 4 * w, 3, pos2, t=t))
    hg.add(conv_atom("up1", 4 * w, 2 * w, (3,) * r, pos1))
    hg.add(conv_atom("up2", 2 * w, w, (3,) * r, pos0))
    return hg


def _head_cost(cfg: ModelConfig, pos0):
    r = 2 if cfg.rank == "2d" else 3
    w = cfg.hourglass_width
    head = LayerCost("head")
    head.add(unit_cost("unit", "std", cfg.rank, w, w, 3, pos0))
    cout = cfg.num_disparities if cfg.rank == "2d" else 1
    head.add(conv_atom("final", w, cout, (3,) * r, pos0, bias=True, bn=False))
    return head


def network_cost(cfg: ModelConfig, input_hw, train=False):
    """Hierarchical MACs/params tree for a full model at the given input
    resolution; eval mode (the tables' convention) runs only the last head."""
    h, w = input_hw
    check(h % 4 == 0 and w % 4 == 0, "input extents must be divisible by 4")
    h4 = _half(_half(h))
    w4 = _half(_half(w))
    d4 = cfg.num_disparities
    root = LayerCost(f"{cfg.variant}@{h}x{w}")

    fe = _feature_extraction_cost(cfg, h, w)
    root.add(fe.repeated(2, "feature_extraction", "second view"))

    if cfg.rank == "2d":
        red = LayerCost("channel_reduction_one_view")
        cin = cfg.feature_channels
        for i, cout in enumerate(cfg.reduction_channels):
            red.add(unit_cost(f"pw{i}", "std", "2d", cin, cout, 1, h4 * w4))
            cin = cout
        root.add(red.repeated(2, "channel_reduction", "second view"))
        if cfg.cost_volume == "interlaced":
            spec = InterlaceSpec.default_for(cfg.unary_channels,
                                             cfg.interlace_i)
            root.add(_interlaced_cost(cfg, spec, h4, w4))
        else:
            root.add(LayerCost("cost_volume"))
        pos0 = h4 * w4
        pre_cin = d4
    else:
        root.add(LayerCost("cost_volume"))  # group-wise correlation: no convs
        pos0 = d4 * h4 * w4
        pre_cin = cfg.num_groups

    pre = LayerCost("pre_hourglass")
    kind, t = cfg.pre_hourglass_kind, cfg.pre_hourglass_t
    pre.add(unit_cost("a1", kind, cfg.rank, pre_cin, cfg.hourglass_width, 3,
                      pos0, t=t))
    for name in ("a2", "b1", "b2"):
        pre.add(unit_cost(name, kind, cfg.rank, cfg.hourglass_width,
                          cfg.hourglass_width, 3, pos0, t=t))
    root.add(pre)

    hgs = LayerCost("hourglasses")
    for i in range(cfg.num_hourglasses):
        hg = _hourglass_cost(cfg, pos0)
        hg.label = f"hourglass{i}"
        hgs.add(hg)
    root.add(hgs)

    heads = LayerCost("heads")
    active = cfg.num_hourglasses if train else 1
    for i in range(cfg.num_hourglasses):
        if i >= cfg.num_hourglasses - active:
            head = _head_cost(cfg, pos0)
            head.label = f"head{i}"
        else:
            # present in the model but skipped in eval: params only
            head = LayerCost(f"head{i} (not evaluated)", 0,
                             _head_cost(cfg, pos0).params)
        heads.add(head)
    root.add(heads)
    return root


# ---------------------------------------------------------------------------
# instrumented oracle
# ---------------------------------------------------------------------------

def instrumented_count(model: StereoModel, left, right, train=False):
    """Run a real forward pass with multiply counting enabled.

    Returns (total_macs, {scope: macs}).  Only convolution multiplies are
    recorded, so this is directly comparable to :func:`network_cost`.
    """
    from .tensor import no_grad
    model.train(train)
    with no_grad(), K.count_macs() as rec:
        model.forward(left, right, train=train)
    return rec.total, rec.by_scope()


def parameter_count(model: StereoModel):
    return sum(p.size for p in model.parameters())


def serialized_bytes(model: StereoModel):
    """Payload size of the f32 weights container (params + BN statistics)."""
    return 4 * sum(arr.size for _, arr in model.state_items())


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

def cost_rows(tree: LayerCost, depth=1):
    total = max(tree.macs, 1)
    rows = []
    for label, macs, params in tree.flatten(depth):
        rows.append({"label": label.strip(), "macs": macs, "params": params,
                     "share_percent": round(100.0 * macs / total, 2)})
    return rows


def emit_csv(rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def emit_json(rows):
    return json.dumps(rows, indent=2)


def emit_table(rows):
    lines = [f"{'module':<34}{'GMACs':>10}{'params(M)':>12}{'share%':>8}"]
    for r in rows:
        lines.append(f"{r['label']:<34}{r['macs'] / 1e9:>10.2f}"
                     f"{r['params'] / 1e6:>12.3f}{r['share_percent']:>8.2f}")
    return "\n".join(lines)
