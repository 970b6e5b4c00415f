"""Angle/count conversions, encoder quantization and gear-train mapping.

All angles are multi-turn degrees. Nothing here wraps to [0, 360): the
guidance law works on relative deltas since motion onset, and wrapping would
corrupt them.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import ConfigError, ZeroGearRatio


class WheelId(enum.IntEnum):
    """Angulation wheel index; every per-wheel pair is indexed by this."""

    WHEEL1 = 0  # up/down
    WHEEL2 = 1  # left/right


WHEELS = (WheelId.WHEEL1, WheelId.WHEEL2)


class WheelReading(NamedTuple):
    """Preceptor wheel angles for one control cycle, in degrees."""

    wheel1: float
    wheel2: float


@dataclass(frozen=True)
class EncoderConfig:
    counts_per_rev: int = 8192  # 2048 CPR x4 quadrature
    zero_offset_deg: float = 0.0

    def __post_init__(self):
        if isinstance(self.counts_per_rev, bool) or not isinstance(self.counts_per_rev, int):
            raise ConfigError("counts_per_rev must be an integer", key="counts_per_rev")
        if self.counts_per_rev < 4:
            raise ConfigError(
                f"counts_per_rev must be >= 4, got {self.counts_per_rev}", key="counts_per_rev"
            )
        if not math.isfinite(self.zero_offset_deg):
            raise ConfigError("zero_offset_deg must be finite", key="zero_offset_deg")

    @property
    def quantum_deg(self) -> float:
        return 360.0 / self.counts_per_rev


@dataclass(frozen=True)
class GearTrain:
    """Gear ratios between a control wheel and its motor.

    ``ratio`` (g1*g2) is computed once; a wheel delta maps to a motor delta of
    ``delta / ratio``, so ratios below one give a reduction drive.
    """

    g1: float = 1.0
    g2: float = 0.1
    ratio: float = field(init=False, repr=False)

    def __post_init__(self):
        if not (math.isfinite(self.g1) and math.isfinite(self.g2)):
            raise ConfigError("gear ratios must be finite", key="gear")
        ratio = float(self.g1) * float(self.g2)
        if ratio == 0.0:
            raise ZeroGearRatio(f"gear ratio product is zero (g1={self.g1}, g2={self.g2})", key="gear")
        object.__setattr__(self, "ratio", ratio)


def quantize_angle(angle: float, cfg: EncoderConfig) -> int:
    """Encoder count nearest to ``angle`` (ties round up)."""
    return math.floor((angle - cfg.zero_offset_deg) * cfg.counts_per_rev / 360.0 + 0.5)


def counts_to_angle(counts: int, cfg: EncoderConfig) -> float:
    return counts * 360.0 / cfg.counts_per_rev + cfg.zero_offset_deg


def encoder_read(angle: float, cfg: EncoderConfig) -> float:
    """Angle as reported by the incremental encoder (quantized)."""
    return counts_to_angle(quantize_angle(angle, cfg), cfg)


def wheel_delta_to_motor_delta(delta_deg: float, gear: GearTrain) -> float:
    return delta_deg / gear.ratio


def motor_to_wheel(motor_deg: float, gear: GearTrain) -> float:
    return motor_deg * gear.ratio
