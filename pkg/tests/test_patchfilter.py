"""Patch gating statistics and decision order."""

import colorsys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from changeqa.patchfilter import (
    PatchFilterConfig,
    intensity_std,
    keep_patch,
    mean_exg,
    mean_saturation,
)
from changeqa.raster import RgbImage


def two_pass_std(values: np.ndarray) -> float:
    """Naive two-pass population standard deviation."""
    mean = sum(values) / len(values)
    return (sum((v - mean) ** 2 for v in values) / len(values)) ** 0.5


def gray(level: int, shape=(4, 4)) -> RgbImage:
    return RgbImage(np.full(shape + (3,), level, dtype=np.uint8))


class TestIntensityStd:
    def test_constant_patch_zero(self):
        assert intensity_std(gray(77)) == 0.0

    def test_half_black_half_white_is_half(self):
        pixels = np.zeros((2, 2, 3), dtype=np.uint8)
        pixels[:, 1, :] = 255
        assert intensity_std(RgbImage(pixels)) == pytest.approx(0.5)

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(2)
        pixels = rng.integers(0, 256, size=(6, 5, 3), dtype=np.uint8)
        luma = (pixels.astype(float).mean(axis=2) / 255.0).ravel()
        assert intensity_std(RgbImage(pixels)) == pytest.approx(two_pass_std(luma), abs=1e-9)

    def test_empty_patch_rejected(self):
        with pytest.raises(ValueError):
            intensity_std(np.zeros((0, 3, 3)), value_scale="unit")


class TestMeanSaturation:
    def test_gray_patch_zero(self):
        assert mean_saturation(gray(128)) == 0.0

    def test_pure_red_is_one(self):
        pixels = np.zeros((2, 2, 3), dtype=np.uint8)
        pixels[:, :, 0] = 255
        assert mean_saturation(RgbImage(pixels)) == 1.0

    def test_black_counts_as_zero_saturation(self):
        assert mean_saturation(gray(0)) == 0.0

    def test_hand_computed_four_pixel_fixture(self):
        # (255,0,0) -> 1.0; (128,128,128) -> 0; (100,200,50) -> 150/200; (0,0,0) -> 0
        pixels = np.array(
            [[[255, 0, 0], [128, 128, 128]], [[100, 200, 50], [0, 0, 0]]], dtype=np.uint8
        )
        expected = (1.0 + 0.0 + 150 / 200 + 0.0) / 4
        assert mean_saturation(RgbImage(pixels)) == pytest.approx(expected)

    def test_agrees_with_colorsys(self):
        rng = np.random.default_rng(4)
        pixels = rng.integers(1, 256, size=(3, 3, 3), dtype=np.uint8)
        expected = np.mean(
            [
                colorsys.rgb_to_hsv(*(pixels[y, x] / 255.0))[1]
                for y in range(3)
                for x in range(3)
            ]
        )
        assert mean_saturation(RgbImage(pixels)) == pytest.approx(float(expected))


class TestMeanExg:
    def test_gray_patch_zero(self):
        assert mean_exg(gray(200)) == pytest.approx(0.0)

    def test_pure_green_is_two(self):
        pixels = np.zeros((2, 2, 3), dtype=np.uint8)
        pixels[:, :, 1] = 255
        assert mean_exg(RgbImage(pixels)) == pytest.approx(2.0)

    def test_half_green_half_gray_is_one(self):
        pixels = np.zeros((2, 2, 3), dtype=np.uint8)
        pixels[:, 0, 1] = 255  # left column pure green
        pixels[:, 1, :] = 100  # right column gray
        assert mean_exg(RgbImage(pixels)) == pytest.approx(1.0)


def high_variance_gray(shape=(4, 4)) -> np.ndarray:
    pixels = np.zeros(shape + (3,), dtype=np.uint8)
    pixels[:, ::2, :] = 255
    return pixels


class TestKeepPatch:
    def test_constant_gray_rejected_for_uniformity(self):
        decision = keep_patch(gray(128), PatchFilterConfig())
        assert not decision.keep
        assert decision.reason == "uniformity"

    def test_high_variance_gray_rejected_for_saturation(self):
        decision = keep_patch(RgbImage(high_variance_gray()), PatchFilterConfig())
        assert not decision.keep
        assert decision.reason == "saturation"

    def test_saturated_green_texture_rejected_for_vegetation(self):
        # alternating bright/dark green: high variance, saturation 1, mean
        # ExG = (2*1 + 2*128/255) / 2
        pixels = np.zeros((2, 2, 3), dtype=np.uint8)
        pixels[:, 0, 1] = 255
        pixels[:, 1, 1] = 128
        img = RgbImage(pixels)
        assert intensity_std(img) >= 0.08
        assert mean_saturation(img) >= 0.15
        assert mean_exg(img) == pytest.approx((2.0 + 2.0 * 128 / 255) / 2)
        decision = keep_patch(img, PatchFilterConfig())
        assert not decision.keep
        assert decision.reason == "vegetation"

    def test_urban_texture_kept(self):
        # bright red / dark blue: luma varies, saturation 1, ExG negative
        pixels = np.zeros((2, 2, 3), dtype=np.uint8)
        pixels[:, 0, 0] = 255
        pixels[:, 1, 2] = 100
        assert keep_patch(RgbImage(pixels), PatchFilterConfig()).keep

    def test_byte_and_unit_scale_decisions_match(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            pixels = rng.integers(0, 256, size=(5, 5, 3), dtype=np.uint8)
            byte_decision = keep_patch(RgbImage(pixels), PatchFilterConfig(value_scale="byte"))
            unit_decision = keep_patch(
                pixels.astype(np.float64) / 255.0, PatchFilterConfig(value_scale="unit")
            )
            assert byte_decision == unit_decision

    @given(
        data=st.data(),
        tau_std=st.floats(0.0, 0.5),
        tau_sat=st.floats(0.0, 1.0),
        tau_exg=st.floats(-1.0, 1.0),
    )
    @settings(max_examples=60)
    def test_monotone_in_thresholds(self, data, tau_std, tau_sat, tau_exg):
        pixels = data.draw(
            st.integers(0, 2**32 - 1).map(
                lambda s: np.random.default_rng(s).integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
            )
        )
        img = RgbImage(pixels)
        base = PatchFilterConfig(tau_std=tau_std, tau_sat=tau_sat, tau_exg=tau_exg)
        if keep_patch(img, base).keep:
            return
        # tightening any single gate must never flip a reject into a keep
        tighter = [
            PatchFilterConfig(tau_std=min(tau_std + 0.1, 1.0), tau_sat=tau_sat, tau_exg=tau_exg),
            PatchFilterConfig(tau_std=tau_std, tau_sat=min(tau_sat + 0.1, 1.0), tau_exg=tau_exg),
            PatchFilterConfig(tau_std=tau_std, tau_sat=tau_sat, tau_exg=tau_exg - 0.1),
        ]
        for cfg in tighter:
            assert not keep_patch(img, cfg).keep

    def test_exactly_one_reason_when_rejected(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            pixels = rng.integers(0, 256, size=(3, 3, 3), dtype=np.uint8)
            decision = keep_patch(RgbImage(pixels), PatchFilterConfig())
            if decision.keep:
                assert decision.reason is None
            else:
                assert decision.reason in ("uniformity", "saturation", "vegetation")
