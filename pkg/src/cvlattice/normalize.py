"""Quantize finalized planes to 8 bits for images and model-ready stacks.

All rounding is half away from zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

VOLUME_MODES = ("per_frame_minmax", "fixed_cap", "log1p")


@dataclass(frozen=True)
class NormalizationSpec:
    speed_max: float = 128.0
    volume_mode: str = "per_frame_minmax"
    volume_cap: float = 10.0

    def __post_init__(self):
        if not (self.speed_max > 0):
            raise ValueError(f"speed_max must be > 0, got {self.speed_max}")
        if self.volume_mode not in VOLUME_MODES:
            raise ValueError(f"volume_mode must be one of {VOLUME_MODES}, got {self.volume_mode!r}")
        if self.volume_mode == "fixed_cap" and not (self.volume_cap > 0):
            raise ValueError(f"volume_cap must be > 0, got {self.volume_cap}")


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _to_u8(q) -> np.ndarray:
    return np.clip(q, 0, 255).astype(np.uint8)


def normalize_speed(plane, spec: NormalizationSpec = NormalizationSpec()) -> np.ndarray:
    v = np.clip(np.asarray(plane, dtype=np.float64), 0.0, spec.speed_max)
    return _to_u8(round_half_away(v * 255.0 / spec.speed_max))


def normalize_volume(plane, spec: NormalizationSpec = NormalizationSpec()) -> np.ndarray:
    n = np.asarray(plane, dtype=np.float64)
    if n.size == 0:
        return np.zeros(n.shape, np.uint8)
    if spec.volume_mode == "per_frame_minmax":
        lo, hi = n.min(), n.max()
        if hi == lo:
            return np.zeros(n.shape, np.uint8)
        return _to_u8(round_half_away((n - lo) * 255.0 / (hi - lo)))
    if spec.volume_mode == "fixed_cap":
        return _to_u8(round_half_away(np.minimum(n, spec.volume_cap) * 255.0 / spec.volume_cap))
    hi = n.max()
    if hi <= 0:
        return np.zeros(n.shape, np.uint8)
    return _to_u8(round_half_away(np.log1p(n) * 255.0 / math.log1p(hi)))
