"""Appearance-based patch gating: uniformity, saturation, vegetation.

Statistics are computed on the unit scale regardless of input encoding; the
thresholds only make sense on [0, 1] values. The three tests run in a fixed
order (uniformity, saturation, vegetation) so the rejection reason for a
given patch is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import RgbImage

__all__ = [
    "PatchFilterConfig",
    "PatchDecision",
    "intensity_std",
    "mean_saturation",
    "mean_exg",
    "keep_patch",
]

REASON_UNIFORMITY = "uniformity"
REASON_SATURATION = "saturation"
REASON_VEGETATION = "vegetation"


@dataclass(frozen=True)
class PatchFilterConfig:
    tau_std: float = 0.08
    tau_sat: float = 0.15
    tau_exg: float = 0.35
    value_scale: str = "byte"

    def __post_init__(self) -> None:
        if self.tau_std < 0 or not np.isfinite(self.tau_std):
            raise ValueError(f"tau_std must be finite and >= 0, got {self.tau_std}")
        if not 0.0 <= self.tau_sat <= 1.0:
            raise ValueError(f"tau_sat must lie in [0, 1], got {self.tau_sat}")
        if not np.isfinite(self.tau_exg):
            raise ValueError(f"tau_exg must be finite, got {self.tau_exg}")
        if self.value_scale not in ("unit", "byte"):
            raise ValueError(f"value_scale must be unit or byte, got {self.value_scale!r}")


@dataclass(frozen=True)
class PatchDecision:
    keep: bool
    reason: str | None = None


def _unit_pixels(patch: RgbImage | np.ndarray, value_scale: str) -> np.ndarray:
    pixels = patch.pixels if isinstance(patch, RgbImage) else np.asarray(patch)
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.size == 0:
        raise ValueError(f"patch must be a nonempty (h, w, 3) array, got shape {pixels.shape}")
    pixels = pixels.astype(np.float64)
    if value_scale == "byte":
        pixels = pixels / 255.0
    return pixels


def intensity_std(patch: RgbImage | np.ndarray, value_scale: str = "byte") -> float:
    """Population standard deviation of per-pixel luma (channel mean), unit scale."""
    luma = _unit_pixels(patch, value_scale).mean(axis=2)
    return float(luma.std())


def mean_saturation(patch: RgbImage | np.ndarray, value_scale: str = "byte") -> float:
    """Mean HSV saturation, with S defined as 0 for black pixels."""
    pixels = _unit_pixels(patch, value_scale)
    cmax = pixels.max(axis=2)
    cmin = pixels.min(axis=2)
    sat = np.where(cmax > 0, (cmax - cmin) / np.where(cmax > 0, cmax, 1.0), 0.0)
    return float(sat.mean())


def mean_exg(patch: RgbImage | np.ndarray, value_scale: str = "byte") -> float:
    """Mean Excess Green index 2G - R - B on the unit scale; range [-2, 2]."""
    pixels = _unit_pixels(patch, value_scale)
    exg = 2.0 * pixels[:, :, 1] - pixels[:, :, 0] - pixels[:, :, 2]
    return float(exg.mean())


def keep_patch(patch: RgbImage | np.ndarray, cfg: PatchFilterConfig) -> PatchDecision:
    """First-failure gate over uniformity, saturation, and vegetation tests."""
    pixels = _unit_pixels(patch, cfg.value_scale)
    if intensity_std(pixels, "unit") < cfg.tau_std:
        return PatchDecision(keep=False, reason=REASON_UNIFORMITY)
    if mean_saturation(pixels, "unit") < cfg.tau_sat:
        return PatchDecision(keep=False, reason=REASON_SATURATION)
    if mean_exg(pixels, "unit") > cfg.tau_exg:
        return PatchDecision(keep=False, reason=REASON_VEGETATION)
    return PatchDecision(keep=True)
