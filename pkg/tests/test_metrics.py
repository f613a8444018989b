"""Disparity metrics against hand-derived fixtures and properties."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stereolite.metrics import d1, epe, evaluate, px_k
from stereolite.network import DisparityMap

# the worked quadruple: errors (4, 4, 0, 0); thresholds (3, 5, 3, 3)
GT = np.array([[[10.0, 100.0, 50.0, 2.0]]])
PRED = np.array([[[14.0, 104.0, 50.0, 2.0]]])


def test_epe_fixture():
    assert epe(PRED, GT) == pytest.approx(2.0)


def test_px3_fixture():
    assert px_k(PRED, GT) == pytest.approx(50.0)


def test_d1_fixture():
    # gt=100 has threshold 5, so its 4px error is an inlier; only gt=10 is out
    assert d1(PRED, GT) == pytest.approx(25.0)


def test_trivial_cases():
    assert epe(GT, GT) == 0.0
    assert px_k(GT, GT) == 0.0
    assert d1(GT, GT) == 0.0
    assert epe(GT + 1.0, GT) == pytest.approx(1.0)
    assert px_k(GT + 1.0, GT) == 0.0
    assert px_k(GT + 4.0, GT) == 100.0


def test_threshold_is_strict():
    gt = np.full((1, 2, 2), 10.0)
    assert px_k(gt + 3.0, gt) == 0.0      # exactly 3 px: inlier
    assert px_k(gt + 3.0001, gt) == 100.0
    big = np.full((1, 2, 2), 100.0)
    assert d1(big + 5.0, big) == 0.0      # exactly 0.05*gt: inlier


def test_mask_intersection_and_empty():
    pred = DisparityMap(PRED[..., :2], np.array([[[True, False]]]))
    gt = DisparityMap(GT[..., :2], np.array([[[True, True]]]))
    assert epe(pred, gt) == pytest.approx(4.0)
    report = evaluate(pred, gt)
    assert report.valid_count == 1
    empty = DisparityMap(GT, np.zeros_like(GT, dtype=bool))
    with pytest.raises(Exception):
        epe(empty, DisparityMap(GT))


def test_shape_mismatch_rejected():
    with pytest.raises(Exception):
        epe(PRED[..., :3], GT)


def test_report_json_roundtrip():
    report = evaluate(PRED, GT)
    parsed = json.loads(report.to_json())
    assert parsed == {"epe": 2.0, "px3": 50.0, "d1": 25.0, "valid_count": 4}


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), scale=st.floats(0.1, 30))
def test_d1_never_exceeds_px3(seed, scale):
    gen = np.random.default_rng(seed)
    gt = np.abs(gen.standard_normal((1, 5, 5))) * scale + 0.1
    pred = gt + gen.standard_normal((1, 5, 5)) * scale
    assert d1(pred, gt) <= px_k(pred, gt) + 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_permutation_invariance(seed):
    gen = np.random.default_rng(seed)
    gt = np.abs(gen.standard_normal((1, 1, 40))) * 20 + 1
    pred = gt + gen.standard_normal((1, 1, 40)) * 5
    perm = gen.permutation(40)
    assert epe(pred, gt) == pytest.approx(epe(pred[..., perm], gt[..., perm]))
    assert d1(pred, gt) == pytest.approx(d1(pred[..., perm], gt[..., perm]))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), c=st.floats(0.01, 10))
def test_epe_translation(seed, c):
    gen = np.random.default_rng(seed)
    gt = np.abs(gen.standard_normal((1, 4, 4))) * 10
    pred = gt + np.abs(gen.standard_normal((1, 4, 4)))  # pred >= gt
    assert epe(pred + c, gt) == pytest.approx(epe(pred, gt) + c)


def test_percentages_bounded(rng):
    gt = np.abs(rng.standard_normal((1, 8, 8))) * 50 + 1
    pred = gt + rng.standard_normal((1, 8, 8)) * 20
    r = evaluate(pred, gt)
    assert 0.0 <= r.px3 <= 100.0 and 0.0 <= r.d1 <= 100.0
