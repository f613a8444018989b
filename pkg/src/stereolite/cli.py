"""Command-line surface.

Heavy modules are imported lazily inside ``main`` so that ``--threads`` /
MSNET_THREADS can cap the BLAS worker pool before the numerics are loaded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

MODEL_ALIASES = {
    "2d": "mobile2d",
    "3d": "mobile3d",
    "baseline2d": "baseline2d",
    "baseline3d": "baseline3d",
    "mobile2d": "mobile2d",
    "mobile3d": "mobile3d",
    "micro": "micro",
}


class CliError(Exception):
    """Fatal CLI error with a named code; maps to a nonzero exit status."""

    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="stereolite",
        description="Stereo disparity networks with built-in cost analysis.")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS worker threads (default: "
                             "MSNET_THREADS or library default)")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("analyze", help="per-module MACs/params report")
    p.add_argument("--model", required=True, choices=sorted(MODEL_ALIASES))
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--train", action="store_true",
                   help="count all prediction heads, not just the final one")
    p.add_argument("--format", choices=("table", "csv", "json"),
                   default="table")

    p = sub.add_parser("sweep", help="expansion-factor reduction sweep")
    p.add_argument("--channels", default="32,64,128")
    p.add_argument("--t-max", type=int, default=9)
    p.add_argument("--rank", choices=("2d", "3d"), required=True)
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")

    sub.add_parser("table1", help="print the example reduction factors")

    p = sub.add_parser("infer", help="predict disparity for an image pair")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--model", required=True, choices=sorted(MODEL_ALIASES))
    p.add_argument("--pad", action="store_true",
                   help="reflect-pad inputs to a compatible size, crop back")
    p.add_argument("--out", required=True, help="output .pfm or .png path")

    p = sub.add_parser("train-toy", help="overfit one synthetic pair")
    p.add_argument("--model", default="micro", choices=sorted(MODEL_ALIASES))
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="weights output path")

    p = sub.add_parser("eval", help="score a disparity prediction")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    fmt = p.add_mutually_exclusive_group()
    fmt.add_argument("--kitti", action="store_true",
                     help="16-bit PNG maps (value/256, 0 invalid)")
    fmt.add_argument("--pfm", action="store_true", help="PFM maps (default)")
    return parser


def _apply_threads(threads):
    if threads is None:
        threads = os.environ.get("MSNET_THREADS")
    if threads in (None, "", 0):
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(threads)


def _load_disparity(path, kitti):
    from .formats import kitti_disp_decode, pfm_read
    from .network import DisparityMap
    if kitti or str(path).endswith(".png"):
        return kitti_disp_decode(path)
    values = pfm_read(path)
    if values.ndim == 2:
        values = values[None]
    # sparse ground truth stores 0 at holes
    return DisparityMap(values, values > 0)


def _pad_to_multiple(img, multiple):
    """Reflect-pad [N,C,H,W] on bottom/right to the next multiple."""
    import numpy as np
    h, w = img.shape[2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return img, (h, w)
    return np.pad(img, ((0, 0), (0, 0), (0, ph), (0, pw)),
                  mode="reflect"), (h, w)


def _cmd_analyze(args):
    from . import costmodel as cm
    from .network import ModelConfig
    cfg = ModelConfig.preset(MODEL_ALIASES[args.model])
    tree = cm.network_cost(cfg, (args.height, args.width), train=args.train)
    rows = cm.cost_rows(tree, depth=1)
    if args.format == "csv":
        sys.stdout.write(cm.emit_csv(rows))
    elif args.format == "json":
        print(cm.emit_json(rows))
    else:
        print(cm.emit_table(rows))
    return 0


def _cmd_sweep(args):
    import csv as csvmod

    from . import costmodel as cm
    try:
        channels = [int(c) for c in args.channels.split(",") if c]
    except ValueError:
        raise CliError("bad-channels",
                       f"--channels must be comma-separated integers, "
                       f"got {args.channels!r}")
    rows = cm.expansion_sweep(channels, args.t_max, args.rank)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csvmod.writer(out)
        writer.writerow(("channels", "t", "reduction"))
        for c, t, r in rows:
            writer.writerow((c, t, f"{r:.4f}"))
    finally:
        if args.out:
            out.close()
    return 0


def _cmd_table1(args):
    from . import costmodel as cm
    factors = cm.table1_reduction_factors()
    for (rank, kind), value in sorted(factors.items()):
        t = cm.TABLE1_EXAMPLE["t"] if kind == "v2" else "-"
        print(f"{rank} {kind} (k=3, 32->64, t={t}): {value:.2f}x")
    return 0


def _cmd_infer(args):
    import numpy as np

    from .formats import (FormatError, image_read, kitti_disp_encode,
                          model_load, pfm_write)
    from .network import DisparityMap, ModelConfig, StereoModel
    cfg = ModelConfig.preset(MODEL_ALIASES[args.model])
    try:
        left = image_read(args.left)[None]
        right = image_read(args.right)[None]
    except (OSError, FormatError) as e:
        raise CliError("bad-image", str(e))
    if left.shape != right.shape:
        raise CliError("shape-mismatch",
                       f"left {left.shape[2:]} vs right {right.shape[2:]}")
    # two stride-2 backbone stages plus two hourglass stages: extents must
    # survive /16 and back
    if args.pad:
        left, size = _pad_to_multiple(left, 16)
        right, _ = _pad_to_multiple(right, 16)
    else:
        size = left.shape[2:]
        if any(e % 16 for e in size):
            raise CliError("bad-extent",
                           f"input {size[0]}x{size[1]} is not a multiple of "
                           f"16; rerun with --pad")
    model = StereoModel(cfg, seed=0)
    try:
        model_load(args.weights, model)
    except (OSError, FormatError, KeyError, ValueError) as e:
        raise CliError("bad-weights", str(e))
    model.eval()
    pred = model.predict(left.astype(np.float32), right.astype(np.float32))
    values = pred.values[:, : size[0], : size[1]]
    if args.out.endswith(".png"):
        kitti_disp_encode(DisparityMap(values), args.out)
    else:
        pfm_write(args.out, values[0])
    print(f"wrote {args.out} ({size[0]}x{size[1]})")
    return 0


def _cmd_train_toy(args):
    from .formats import model_save
    from .network import ModelConfig
    from .training import toy_overfit
    cfg = ModelConfig.preset(MODEL_ALIASES[args.model])
    result, model = toy_overfit(cfg, steps=args.steps, seed=args.seed,
                                log=print)
    print(f"{'converged' if result.converged else 'not converged'} after "
          f"{result.steps} steps, epe {result.final_epe:.4f}")
    if args.out:
        model_save(args.out, model)
        print(f"wrote {args.out}")
    return 0 if result.converged else 1


def _cmd_eval(args):
    from .formats import FormatError
    from .kernels import ShapeError
    from .metrics import evaluate
    try:
        pred = _load_disparity(args.pred, args.kitti)
        gt = _load_disparity(args.gt, args.kitti)
        report = evaluate(pred, gt)
    except (OSError, FormatError, ShapeError) as e:
        raise CliError("bad-eval-input", str(e))
    print(report.to_json())
    return 0


_COMMANDS = {
    "analyze": _cmd_analyze,
    "sweep": _cmd_sweep,
    "table1": _cmd_table1,
    "infer": _cmd_infer,
    "train-toy": _cmd_train_toy,
    "eval": _cmd_eval,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage()
        return 2
    _apply_threads(args.threads)
    try:
        return _COMMANDS[args.command](args)
    except CliError as e:
        print(f"error [{e.code}]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
