"""File formats: PFM, 16-bit PNG disparity, PPM, weights container."""

import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stereolite import formats as F
from stereolite.network import DisparityMap, ModelConfig, StereoModel


class TestPfm:
    def test_roundtrip_gray_bit_exact(self, rng, tmp_path):
        a = rng.standard_normal((9, 13)).astype(np.float32)
        p = tmp_path / "a.pfm"
        F.pfm_write(p, a)
        assert np.array_equal(F.pfm_read(p), a)

    def test_roundtrip_color(self, rng, tmp_path):
        a = rng.standard_normal((5, 7, 3)).astype(np.float32)
        p = tmp_path / "c.pfm"
        F.pfm_write(p, a)
        assert np.array_equal(F.pfm_read(p), a)

    def test_hand_assembled_fixture(self, tmp_path):
        # 2x2 grayscale, little-endian, bottom row stored first
        vals = np.array([[1.5, -2.25], [3.0, 0.125]], dtype=np.float32)
        p = tmp_path / "fix.pfm"
        with open(p, "wb") as f:
            f.write(b"Pf\n2 2\n-1.0\n")
            f.write(np.ascontiguousarray(vals[::-1]).astype("<f4").tobytes())
        assert np.array_equal(F.pfm_read(p), vals)

    def test_big_endian_fixture(self, tmp_path):
        vals = np.array([[1.5, -2.25], [3.0, 0.125]], dtype=np.float32)
        p = tmp_path / "be.pfm"
        with open(p, "wb") as f:
            f.write(b"Pf\n2 2\n1.0\n")  # positive scale = big-endian
            f.write(np.ascontiguousarray(vals[::-1]).astype(">f4").tobytes())
        assert np.array_equal(F.pfm_read(p), vals)

    def test_malformed_and_truncated(self, tmp_path):
        bad = tmp_path / "bad.pfm"
        bad.write_bytes(b"P6\n2 2\n255\n")
        with pytest.raises(F.FormatError):
            F.pfm_read(bad)
        short = tmp_path / "short.pfm"
        short.write_bytes(b"Pf\n4 4\n-1.0\n" + b"\x00" * 10)
        with pytest.raises(F.FormatError):
            F.pfm_read(short)

    @settings(max_examples=15, deadline=None)
    @given(h=st.integers(1, 10), w=st.integers(1, 10),
           seed=st.integers(0, 10 ** 6))
    def test_roundtrip_property(self, h, w, seed):
        import tempfile
        a = np.random.default_rng(seed).standard_normal((h, w)).astype(
            np.float32)
        with tempfile.TemporaryDirectory() as d:
            p = f"{d}/prop.pfm"
            F.pfm_write(p, a)
            assert np.array_equal(F.pfm_read(p), a)


class TestKittiPng:
    def test_scale_and_invalid_convention(self, tmp_path):
        disp = DisparityMap(np.array([[[1.0, 0.0], [12.34, 255.0]]],
                                     dtype=np.float32),
                            np.array([[[True, False], [True, True]]]))
        p = tmp_path / "d.png"
        F.kitti_disp_encode(disp, p)
        back = F.kitti_disp_decode(p)
        # stored = round(disp*256); 12.34 -> 3159 -> 12.33984375
        assert back.values[0, 0, 0] == pytest.approx(1.0)
        assert back.values[0, 1, 0] * 256 == 3159
        assert not back.valid_mask[0, 0, 1]
        err = np.abs(back.values - disp.values)[disp.valid_mask]
        assert err.max() < 1.0 / 256.0

    def test_decode_rejects_8bit(self, tmp_path):
        from PIL import Image
        p = tmp_path / "gray8.png"
        Image.fromarray(np.zeros((4, 4), dtype=np.uint8)).save(p)
        with pytest.raises(F.FormatError):
            F.kitti_disp_decode(p)

    def test_encode_clamps(self, tmp_path):
        disp = DisparityMap(np.array([[[300.0, -2.0]]], dtype=np.float32))
        p = tmp_path / "clamp.png"
        F.kitti_disp_encode(disp, p)
        back = F.kitti_disp_decode(p)
        assert back.values[0, 0, 0] == pytest.approx(65535 / 256.0)
        assert not back.valid_mask[0, 0, 1]  # negative clamps to 0 = invalid


class TestPpm:
    def test_p6_with_comment(self, tmp_path):
        img = (np.arange(24).reshape(2, 4, 3) * 10).astype(np.uint8)
        p = tmp_path / "i.ppm"
        p.write_bytes(b"P6\n# comment line\n4 2\n255\n" + img.tobytes())
        out = F.ppm_read(p)
        assert out.shape == (3, 2, 4)
        np.testing.assert_allclose(out.transpose(1, 2, 0), img / 255.0)

    def test_p5_grayscale_replicates_channels(self, tmp_path):
        img = np.arange(8, dtype=np.uint8).reshape(2, 4)
        p = tmp_path / "g.pgm"
        p.write_bytes(b"P5\n4 2\n255\n" + img.tobytes())
        out = F.ppm_read(p)
        assert out.shape == (3, 2, 4)
        assert np.array_equal(out[0], out[2])

    def test_16bit_maxval(self, tmp_path):
        img = np.array([[0, 65535]], dtype=">u2")
        p = tmp_path / "w.pgm"
        p.write_bytes(b"P5\n2 1\n65535\n" + img.tobytes())
        out = F.ppm_read(p)
        assert out[0, 0, 1] == pytest.approx(1.0)

    def test_truncated(self, tmp_path):
        p = tmp_path / "t.ppm"
        p.write_bytes(b"P6\n4 4\n255\n\x00\x00")
        with pytest.raises(F.FormatError):
            F.ppm_read(p)


class TestWeightsContainer:
    def _entries(self, rng):
        return [("conv.weight", rng.standard_normal((4, 2, 3, 3))),
                ("bn.gamma", rng.standard_normal(4)),
                ("scalarish", rng.standard_normal(()))]

    def test_roundtrip_bit_exact_including_order(self, rng, tmp_path):
        entries = self._entries(rng)
        p = tmp_path / "w.msnw"
        F.weights_save(p, entries)
        back = F.weights_load(p)
        assert [n for n, _ in back] == [n for n, _ in entries]
        for (_, a), (_, b) in zip(entries, back):
            assert np.array_equal(np.asarray(a, dtype=np.float32), b)

    def test_crc_detects_payload_corruption(self, rng, tmp_path):
        p = tmp_path / "w.msnw"
        F.weights_save(p, self._entries(rng))
        raw = bytearray(p.read_bytes())
        raw[-20] ^= 0x01
        p.write_bytes(bytes(raw))
        with pytest.raises(F.FormatError, match="crc"):
            F.weights_load(p)

    def test_bad_magic_and_truncation(self, rng, tmp_path):
        p = tmp_path / "w.msnw"
        F.weights_save(p, self._entries(rng))
        raw = p.read_bytes()
        p.write_bytes(b"XXXXX" + raw[5:])
        with pytest.raises(F.FormatError, match="magic"):
            F.weights_load(p)
        p.write_bytes(raw[:20])
        with pytest.raises(F.FormatError):
            F.weights_load(p)

    def test_duplicate_names_rejected_on_save(self, rng, tmp_path):
        with pytest.raises(Exception):
            F.weights_save(tmp_path / "d.msnw",
                           [("a", np.zeros(2)), ("a", np.ones(2))])

    def test_model_roundtrip_and_strictness(self, tmp_path):
        model = StereoModel(ModelConfig.preset("micro"), seed=3)
        p = tmp_path / "m.msnw"
        F.model_save(p, model)
        other = StereoModel(ModelConfig.preset("micro"), seed=99)
        F.model_load(p, other)
        for (na, a), (nb, b) in zip(model.state_items(),
                                    other.state_items()):
            assert na == nb and np.array_equal(a, b)
        # a different architecture must refuse these weights
        mismatched = StereoModel(ModelConfig.preset("baseline2d"), seed=0)
        with pytest.raises((KeyError, ValueError)):
            F.model_load(p, mismatched)
