"""
Inverse-time overcurrent relay model.

    t = a * TMS / (M^b - 1),   M = I_f / (CTR * PS)

Pickup is the normal load current times the overload factor; the plug
setting is the pickup expressed per unit of the CT primary rating.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from dgprotect.errors import NoPickupError, TmsRangeError

logger = logging.getLogger(__name__)

OVERLOAD_FACTOR = 1.25
# M within (1, 1 + PICKUP_EPSILON] has no usable time
PICKUP_EPSILON = 1e-9


class CurveKind(str, Enum):
    NORMAL_INVERSE = "NormalInverse"
    VERY_INVERSE = "VeryInverse"
    EXTREMELY_INVERSE = "ExtremelyInverse"
    LONG_INVERSE = "LongInverse"

    @property
    def short_name(self) -> str:
        return _SHORT_NAMES[self]

    @classmethod
    def parse(cls, text: str) -> "CurveKind":
        """Accepts either the full name ("VeryInverse") or the short one ("VI")."""
        key = text.strip()
        for kind in cls:
            if key.lower() in (kind.value.lower(), kind.short_name.lower()):
                return kind
        raise ValueError(f"unknown curve '{text}'")


_SHORT_NAMES = {
    CurveKind.NORMAL_INVERSE: "NI",
    CurveKind.VERY_INVERSE: "VI",
    CurveKind.EXTREMELY_INVERSE: "EI",
    CurveKind.LONG_INVERSE: "LI",
}


@dataclass(frozen=True)
class CurveConstants:
    numerator_a: float
    exponent_b: float

    def __post_init__(self):
        if self.numerator_a <= 0 or self.exponent_b <= 0:
            raise ValueError(f"curve constants must be positive, got a={self.numerator_a}, b={self.exponent_b}")


# Numerator a, exponent b
CURVE_CONSTANTS: Dict[CurveKind, CurveConstants] = {
    CurveKind.NORMAL_INVERSE: CurveConstants(0.14, 0.02),
    CurveKind.VERY_INVERSE: CurveConstants(13.5, 1.0),
    CurveKind.EXTREMELY_INVERSE: CurveConstants(80.0, 2.0),
    CurveKind.LONG_INVERSE: CurveConstants(120.0, 1.0),
}


@dataclass(frozen=True)
class TmsBounds:
    minimum: float = 0.025
    maximum: float = 1.2

    def contains(self, tms: float) -> bool:
        return self.minimum <= tms <= self.maximum

    def clip(self, tms: float) -> float:
        return min(max(tms, self.minimum), self.maximum)


class RelaySetting(BaseModel):
    model_config = ConfigDict(frozen=True)

    relay_id: int
    curve: CurveKind = CurveKind.NORMAL_INVERSE
    plug_setting: float = Field(gt=0)
    # Range bounds are a design check (TmsBounds), not a model constraint
    tms: float = Field(ge=0)
    ct_ratio: float = Field(gt=0)
    directional: bool = True

    @property
    def pickup_a(self) -> float:
        return self.plug_setting * self.ct_ratio

    def with_curve(self, curve: CurveKind) -> "RelaySetting":
        return self.model_copy(update={"curve": curve})


class TripOutcome(str, Enum):
    TRIP = "trip"
    NO_PICKUP = "no-pickup"
    OUT_OF_RANGE = "out-of-range"


@dataclass(frozen=True)
class OperatingTime:
    outcome: TripOutcome
    seconds: Optional[float] = None

    @property
    def trips(self) -> bool:
        return self.outcome is TripOutcome.TRIP

    @property
    def ms(self) -> Optional[float]:
        return None if self.seconds is None else self.seconds * 1000.0


def pickup_from_load(load_current_a: float, overload_factor: float = OVERLOAD_FACTOR) -> float:
    if load_current_a < 0:
        raise ValueError(f"load current must be >= 0, got {load_current_a}")
    if overload_factor <= 0:
        raise ValueError(f"overload factor must be positive, got {overload_factor}")
    return load_current_a * overload_factor


def plug_setting(pickup_a: float, ctr: float) -> float:
    if ctr <= 0:
        raise ValueError(f"CT ratio must be positive, got {ctr}")
    return pickup_a / ctr


def multiple_of_pickup(setting: RelaySetting, fault_current_a: float) -> float:
    return fault_current_a / setting.pickup_a


def operating_time(setting: RelaySetting, fault_current_a: float) -> OperatingTime:
    if fault_current_a < 0:
        raise ValueError(f"fault current must be >= 0, got {fault_current_a}")
    m = multiple_of_pickup(setting, fault_current_a)
    if m <= 1.0:
        return OperatingTime(TripOutcome.NO_PICKUP)
    if m <= 1.0 + PICKUP_EPSILON:
        return OperatingTime(TripOutcome.OUT_OF_RANGE)
    constants = CURVE_CONSTANTS[setting.curve]
    seconds = constants.numerator_a * setting.tms / (m ** constants.exponent_b - 1.0)
    return OperatingTime(TripOutcome.TRIP, seconds)


def solve_tms(
    curve: CurveKind,
    target_time_s: float,
    ps: float,
    ctr: float,
    fault_current_a: float,
    bounds: Optional[TmsBounds] = None,
    clip: bool = False,
) -> float:
    """
    TMS that makes the relay operate in exactly target_time_s at fault_current_a.

    With bounds given, a result outside them raises TmsRangeError unless
    clip is set, in which case it is clamped into the range.
    """
    if target_time_s <= 0:
        raise ValueError(f"target time must be positive, got {target_time_s}")
    if ps <= 0:
        raise ValueError(f"plug setting must be positive, got {ps}")
    if ctr <= 0:
        raise ValueError(f"CT ratio must be positive, got {ctr}")
    m = fault_current_a / (ps * ctr)
    if m <= 1.0 + PICKUP_EPSILON:
        raise NoPickupError(f"{fault_current_a:.1f} A does not exceed pickup {ps * ctr:.1f} A")

    constants = CURVE_CONSTANTS[curve]
    tms = target_time_s * (m ** constants.exponent_b - 1.0) / constants.numerator_a

    if bounds is not None and not bounds.contains(tms):
        if not clip:
            raise TmsRangeError(f"TMS {tms:.4f} outside [{bounds.minimum}, {bounds.maximum}]")
        clipped = bounds.clip(tms)
        logger.info(f"Clipped TMS {tms:.4f} to {clipped:.4f}")
        tms = clipped
    return tms


def curve_samples(setting: RelaySetting, current_range: Tuple[float, float], n_points: int) -> List[Tuple[float, float]]:
    """Log-spaced (current_a, time_s) samples of the relay's characteristic."""
    low, high = current_range
    if n_points < 1:
        raise ValueError(f"n_points must be >= 1, got {n_points}")
    if high < low or (n_points > 1 and high == low):
        raise ValueError(f"invalid current range [{low}, {high}]")
    if low <= setting.pickup_a * (1.0 + PICKUP_EPSILON):
        raise NoPickupError(
            f"relay {setting.relay_id}: current range starts at {low:.1f} A, "
            f"at or below pickup {setting.pickup_a:.1f} A"
        )

    currents = [low] if n_points == 1 else np.geomspace(low, high, n_points).tolist()
    samples = []
    for current in currents:
        result = operating_time(setting, current)
        samples.append((float(current), result.seconds))
    return samples


def samples_frame(samples: List[Tuple[float, float]]) -> pd.DataFrame:
    return pd.DataFrame(samples, columns=["current_a", "time_s"])
