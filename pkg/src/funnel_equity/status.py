"""Traffic-light banding of adjusted funnel survival ratios."""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from .errors import ConfigError


class Status(Enum):
    GREEN = "green"
    YELLOW = "yellow"
    RED = "red"


@dataclass(frozen=True)
class ThresholdProfile:
    """Banding thresholds, expressed in percent deviation from parity.

    Green is strictly below ``green_below``, Red strictly above ``red_above``,
    Yellow the closed band in between (boundary values are Yellow).
    """

    name: str
    green_below: float
    red_above: float

    def __post_init__(self):
        if not 0 < self.green_below < self.red_above:
            raise ConfigError(
                f"threshold profile {self.name!r}: need 0 < green_below < red_above, "
                f"got ({self.green_below}, {self.red_above})"
            )


STRICT = ThresholdProfile("strict", 1.0, 10.0)
MIDDLE = ThresholdProfile("middle", 3.0, 15.0)
LOOSE = ThresholdProfile("loose", 5.0, 20.0)

BUILTIN_PROFILES = {p.name: p for p in (STRICT, MIDDLE, LOOSE)}

_CUSTOM = re.compile(r"custom\(\s*([0-9.]+)\s*,\s*([0-9.]+)\s*\)$")


def profile_from_name(name: str) -> ThresholdProfile:
    """Resolve 'strict' | 'middle' | 'loose' | 'custom(green,red)'."""
    key = name.strip().lower()
    if key in BUILTIN_PROFILES:
        return BUILTIN_PROFILES[key]
    match = _CUSTOM.match(key)
    if match:
        return ThresholdProfile("custom", float(match.group(1)), float(match.group(2)))
    raise ConfigError(f"unknown threshold profile {name!r}")


def classify(adjusted_sr: float, profile: ThresholdProfile) -> Status:
    """Band the deviation of a survival ratio from parity 1.

    The percent deviation is rounded to 9 decimals before banding so that
    ratios specified in decimal notation land on the threshold exactly
    (and therefore classify Yellow) instead of picking a side by float noise.
    """
    if adjusted_sr <= 0:
        raise ValueError(f"survival ratio must be positive, got {adjusted_sr}")
    deviation = round(abs(adjusted_sr - 1.0) * 100.0, 9)
    if deviation < profile.green_below:
        return Status.GREEN
    if deviation <= profile.red_above:
        return Status.YELLOW
    return Status.RED
