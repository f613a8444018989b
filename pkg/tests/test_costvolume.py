"""Cost volume constructors: planted-shift recovery, group equivalences,
and the learnable interlaced volume."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stereolite import costvolume as cv
from stereolite.kernels import ShapeError
from stereolite.tensor import Tensor


def _features(rng, c=64, h=8, w=40):
    return Tensor(rng.standard_normal((1, c, h, w)).astype(np.float32))


def test_shift_right_moves_columns(rng):
    f = Tensor(np.arange(12.0).reshape(1, 1, 2, 6))
    s = cv.shift_right(f, 2).data
    assert s.shape == (1, 1, 2, 6)
    np.testing.assert_array_equal(s[..., :2], 0.0)
    np.testing.assert_array_equal(s[..., 2:], f.data[..., :4])
    np.testing.assert_array_equal(cv.shift_right(f, 0).data, f.data)
    np.testing.assert_array_equal(cv.shift_right(f, 7).data, 0.0)
    with pytest.raises(ShapeError):
        cv.shift_right(f, -1)


def test_correlation_recovers_planted_shift(rng):
    """argmax over disparity finds a planted displacement on >=99% of the
    pixels where the true match is inside the image."""
    d0, dmax = 5, 12
    left = _features(rng)
    right = np.zeros_like(left.data)
    right[..., : 40 - d0] = left.data[..., d0:]
    vol = cv.correlation_volume(left, Tensor(right), dmax).data
    best = vol.argmax(axis=1)[0]          # [H, W]
    valid = np.zeros((8, 40), dtype=bool)
    valid[:, d0: 40 - d0] = True          # matchable columns
    hit = (best == d0)[valid].mean()
    assert hit >= 0.99


def test_gwc_with_one_group_equals_correlation(rng):
    left, right = _features(rng), _features(rng)
    corr = cv.correlation_volume(left, right, 6).data
    gwc = cv.gwc_volume(left, right, 6, 1).data
    assert gwc.shape == (1, 1, 6, 8, 40)
    np.testing.assert_allclose(gwc[:, 0], corr, atol=1e-6)


def test_gwc_group_means_match_manual_slices(rng):
    left, right = _features(rng, c=8), _features(rng, c=8)
    vol = cv.gwc_volume(left, right, 3, 4).data
    assert vol.shape == (1, 4, 3, 8, 40)
    for d in range(3):
        prod = (left.data * cv.shift_right(right, d).data)
        want = prod.reshape(1, 4, 2, 8, 40).mean(axis=2)
        np.testing.assert_allclose(vol[:, :, d], want, atol=1e-6)
    with pytest.raises(ShapeError):
        cv.gwc_volume(left, right, 3, 3)


def test_concat_volume_layout(rng):
    left, right = _features(rng, c=4), _features(rng, c=4)
    vol = cv.concat_volume(left, right, 5).data
    assert vol.shape == (1, 8, 5, 8, 40)
    np.testing.assert_array_equal(vol[:, :4, 0], left.data)
    np.testing.assert_array_equal(vol[:, 4:, 2],
                                  cv.shift_right(right, 2).data)


class TestInterlacedVolume:
    def _volume(self, channels=32, i=4, order="interlaced"):
        spec = cv.InterlaceSpec.default_for(channels, i)
        return cv.InterlacedVolume(np.random.default_rng(0), channels, spec,
                                   order)

    def test_output_shape(self, rng):
        vol = self._volume()
        left = _features(rng, c=32, h=4, w=52)
        right = _features(rng, c=32, h=4, w=52)
        out = vol(left, right, 48)
        assert out.shape == (1, 48, 4, 52)

    def test_zero_weights_give_zero_scores(self, rng):
        vol = self._volume().eval()
        for p in vol.parameters():
            p.data[...] = 0.0
        left, right = _features(rng, c=32), _features(rng, c=32)
        out = vol(left, right, 6)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_first_layer_reads_interlaced_groups(self):
        # kernel depth = depth stride = 2i: one kernel application sees
        # exactly i channels from each view, never more
        vol = self._volume(channels=32, i=4)
        assert vol.conv1.weight.shape == (16, 1, 8, 3, 3)
        assert vol.conv1.stride == (8, 1, 1)

    def test_depth_collapses_to_one(self):
        spec = cv.InterlaceSpec.default_for(32, 4)
        assert spec.m1 * spec.m2 * spec.m3 == 64
        assert (spec.f1, spec.f2, spec.f3) == (16, 32, 16)

    def test_concatenated_order_differs(self, rng):
        left, right = _features(rng, c=32), _features(rng, c=32)
        a = self._volume(order="interlaced").eval()(left, right, 4).data
        b = self._volume(order="concatenated").eval()(left, right, 4).data
        assert not np.allclose(a, b)

    def test_spec_rejects_bad_factorization(self):
        with pytest.raises(ShapeError):
            cv.InterlaceSpec(i=4, f1=8, f2=16, f3=8, m1=6, m2=8, m3=1)
        with pytest.raises(ShapeError):
            cv.InterlaceSpec(i=4, f1=8, f2=20, f3=8, m1=8, m2=8, m3=1)
        spec = cv.InterlaceSpec.default_for(32, 4)
        with pytest.raises(ShapeError):
            spec.validate_channels(33)


@settings(max_examples=20, deadline=None)
@given(d=st.integers(0, 6), seed=st.integers(0, 10 ** 6))
def test_shift_then_unshift_preserves_interior(d, seed):
    f = Tensor(np.random.default_rng(seed).standard_normal((1, 2, 3, 10)))
    s = cv.shift_right(f, d).data
    if d:
        np.testing.assert_array_equal(s[..., d:], f.data[..., :-d])
    else:
        np.testing.assert_array_equal(s, f.data)
