#!/usr/bin/env python3
"""Regenerate the complexity comparison tables at the published 256x512
analysis resolution: whole-model totals, per-module subtotals, the example
reduction-factor column, and the expansion-factor sweep data."""

import argparse

from stereolite import costmodel as cm
from stereolite.network import ModelConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--height", type=int, default=256)
    parser.add_argument("--width", type=int, default=512)
    parser.add_argument("--sweep-out", default=None,
                        help="also write the sweep rows to this CSV path")
    args = parser.parse_args()

    print("== per-unit reduction factors (k=3, 32->64) ==")
    for (rank, kind), value in sorted(cm.table1_reduction_factors().items()):
        print(f"  {rank} {kind}: {value:.2f}x")

    for name in ("baseline2d", "mobile2d", "baseline3d", "mobile3d"):
        cfg = ModelConfig.preset(name)
        tree = cm.network_cost(cfg, (args.height, args.width))
        print(f"\n== {name} @ {args.height}x{args.width} (eval) ==")
        print(cm.emit_table(cm.cost_rows(tree)))

    if args.sweep_out:
        rows = cm.expansion_sweep([32, 64, 128], 9, "2d")
        rows += cm.expansion_sweep([32, 64, 128], 9, "3d")
        with open(args.sweep_out, "w") as f:
            f.write("rank,channels,t,reduction\n")
            half = len(rows) // 2
            for i, (c, t, r) in enumerate(rows):
                rank = "2d" if i < half else "3d"
                f.write(f"{rank},{c},{t},{r:.4f}\n")
        print(f"\nwrote sweep data to {args.sweep_out}")


if __name__ == "__main__":
    main()
