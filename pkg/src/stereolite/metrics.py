"""Disparity evaluation metrics: end-point error, fixed-threshold outlier
percentage, and the adaptive-threshold outlier percentage used on driving
benchmarks.

All three reduce over the intersection of the prediction's and ground
truth's validity masks; outlier tests use strict inequality, so a pixel
sitting exactly on the threshold is an inlier.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .kernels import check
from .network import DisparityMap


@dataclass
class MetricReport:
    epe: float            # mean |error| in pixels
    px3: float            # percent with |error| > 3 px
    d1: float             # percent with |error| > max(3, 0.05 * gt)
    valid_count: int

    def to_json(self):
        return json.dumps(asdict(self), indent=2)


def _errors(pred, gt):
    pred = pred if isinstance(pred, DisparityMap) else DisparityMap(pred)
    gt = gt if isinstance(gt, DisparityMap) else DisparityMap(gt)
    check(pred.values.shape == gt.values.shape,
          f"prediction shape {pred.values.shape} differs from ground truth "
          f"{gt.values.shape}")
    mask = pred.valid_mask & gt.valid_mask
    check(mask.any(), "no valid pixels to evaluate")
    err = np.abs(pred.values[mask] - gt.values[mask]).astype(np.float64)
    return err, gt.values[mask].astype(np.float64), int(mask.sum())


def epe(pred, gt):
    err, _, _ = _errors(pred, gt)
    return float(err.mean())


def px_k(pred, gt, k=3.0):
    err, _, n = _errors(pred, gt)
    return float(100.0 * np.count_nonzero(err > k) / n)


def d1(pred, gt):
    err, gt_vals, n = _errors(pred, gt)
    threshold = np.maximum(3.0, 0.05 * gt_vals)
    return float(100.0 * np.count_nonzero(err > threshold) / n)


def evaluate(pred, gt) -> MetricReport:
    err, gt_vals, n = _errors(pred, gt)
    threshold = np.maximum(3.0, 0.05 * gt_vals)
    return MetricReport(
        epe=float(err.mean()),
        px3=float(100.0 * np.count_nonzero(err > 3.0) / n),
        d1=float(100.0 * np.count_nonzero(err > threshold) / n),
        valid_count=n,
    )
