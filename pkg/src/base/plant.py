"""
Stochastic plant models
-----------------------
Physical signals the locks act on: the drifting repetition rate of the
mode-locked laser, master/slave CW beat notes and the slowly drifting
optical power after the fiber.

Plants are value types that carry their own numpy Generator; an evolve
call returns the updated plant and advances that generator.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from src.base.sigcore import AMPLITUDE_FULL_SCALE
from src.utils.error_handling import RangeError
from src.utils.logging_utils import get_logger

# Logging configuration
logger = get_logger("Plant")

# Beat notes outside the photodiode bandwidth have no frequency
UNDETECTABLE = None


def _make_rng(seed: Optional[int]) -> np.random.Generator:
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class RepRatePlant:
    """
    Repetition rate of a mode-locked laser.

    Each step: f_rep += drift_hz_per_s * dt + N(0, white_fm_rms_hz).
    """
    f_rep_hz: float = 76.0e6
    drift_hz_per_s: float = 0.0
    white_fm_rms_hz: float = 0.0
    rng_seed: Optional[int] = None
    last_delta_hz: float = 0.0
    rng: np.random.Generator = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.f_rep_hz > 0:
            raise RangeError(f"Repetition rate must be positive, got {self.f_rep_hz}.")
        if self.white_fm_rms_hz < 0:
            raise RangeError("Frequency noise must be non-negative.")
        if self.rng is None:
            object.__setattr__(self, "rng", _make_rng(self.rng_seed))

    def step(self, delta_hz: float) -> "RepRatePlant":
        """Abrupt frequency jump (used when a DDS stands in for the laser)."""
        logger.debug(f"Repetition rate stepped by {delta_hz} Hz.")
        return replace(self, f_rep_hz=self.f_rep_hz + delta_hz, last_delta_hz=delta_hz)


def rep_rate_evolve(plant: RepRatePlant, dt_s: float) -> RepRatePlant:
    """
    Advance the repetition rate by one step; the step's delta is kept on the plant.

    Raises:
        RangeError: If dt_s is not positive.
    """
    if not dt_s > 0:
        raise RangeError(f"Time step must be positive, got {dt_s}.")
    delta = plant.drift_hz_per_s * dt_s
    if plant.white_fm_rms_hz > 0:
        delta += plant.rng.normal(0.0, plant.white_fm_rms_hz)
    return replace(plant, f_rep_hz=plant.f_rep_hz + delta, last_delta_hz=delta)


@dataclass(frozen=True)
class BeatNotePlant:
    """
    Master and slave CW lasers, expressed as offsets from a shared optical carrier.

    Keeping the carrier out of the arithmetic preserves sub-microhertz precision on the beat.
    """
    master_hz: float = 0.0
    slave_hz: float = 0.0
    pd_bandwidth_hz: float = 2.0e9
    carrier_hz: float = 811.29e12
    slave_white_fm_rms_hz: float = 0.0
    rng_seed: Optional[int] = None
    rng: np.random.Generator = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.pd_bandwidth_hz > 0:
            raise RangeError("Photodiode bandwidth must be positive.")
        if self.rng is None:
            object.__setattr__(self, "rng", _make_rng(self.rng_seed))

    def with_slave(self, slave_hz: float) -> "BeatNotePlant":
        return replace(self, slave_hz=slave_hz)

    def slave_noise_draw(self) -> float:
        if self.slave_white_fm_rms_hz <= 0:
            return 0.0
        return float(self.rng.normal(0.0, self.slave_white_fm_rms_hz))


def detectable_beat(master_hz: float, slave_hz: float, pd_bandwidth_hz: float) -> Optional[float]:
    beat = abs(master_hz - slave_hz)
    if beat > pd_bandwidth_hz:
        return UNDETECTABLE
    return beat


def beat_note(plant: BeatNotePlant) -> Optional[float]:
    """Return |master - slave| if the photodiode can detect it, else UNDETECTABLE."""
    return detectable_beat(plant.master_hz, plant.slave_hz, plant.pd_bandwidth_hz)


@dataclass(frozen=True)
class IntensityPlant:
    """
    Optical power available after the fiber, drifting by a seeded random walk.

    Delivered power = actuator_gain * (dds_amplitude / full scale) * power_watts.
    """
    power_watts: float = 1.0e-3
    walk_rms_w_per_rt_s: float = 0.0
    drift_w_per_s: float = 0.0
    actuator_gain: float = 1.0
    rng_seed: Optional[int] = None
    rng: np.random.Generator = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.power_watts < 0:
            raise RangeError("Optical power must be non-negative.")
        if self.walk_rms_w_per_rt_s < 0:
            raise RangeError("Random-walk RMS must be non-negative.")
        if self.rng is None:
            object.__setattr__(self, "rng", _make_rng(self.rng_seed))

    def delivered_power(self, dds_amplitude: float) -> float:
        fraction = min(max(dds_amplitude, 0.0), AMPLITUDE_FULL_SCALE) / AMPLITUDE_FULL_SCALE
        return self.actuator_gain * fraction * self.power_watts


def intensity_evolve(plant: IntensityPlant, dt_s: float) -> IntensityPlant:
    """Advance the power random walk by dt_s; power is clamped at zero."""
    if not dt_s > 0:
        raise RangeError(f"Time step must be positive, got {dt_s}.")
    power = plant.power_watts + plant.drift_w_per_s * dt_s
    if plant.walk_rms_w_per_rt_s > 0:
        power += plant.rng.normal(0.0, plant.walk_rms_w_per_rt_s * math.sqrt(dt_s))
    return replace(plant, power_watts=max(power, 0.0))
