#!/usr/bin/env python3
"""Overfit the micro model on one synthetic constant-disparity pair and
print the end-point-error trajectory; a quick health check of the full
gradient path."""

import argparse

from stereolite.network import ModelConfig
from stereolite.training import toy_overfit


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=400)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--d0", type=int, default=8,
                        help="planted constant disparity in pixels")
    parser.add_argument("--target", type=float, default=1.0)
    args = parser.parse_args()

    result, _ = toy_overfit(ModelConfig.preset("micro"), steps=args.steps,
                            seed=args.seed, d0=args.d0,
                            target_epe=args.target, log=print)
    status = "converged" if result.converged else "did not converge"
    print(f"{status}: epe {result.final_epe:.4f} after {result.steps} steps")
    return 0 if result.converged else 1


if __name__ == "__main__":
    raise SystemExit(main())
