"""
Fixed-point signal primitives
-----------------------------
DDS channels, ADC quantization, phase/frequency detection, prescaling,
boxcar averaging and analog RC filter responses shared by every lock.

All types are plain values; operations are pure or take-and-return state.
"""

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.error_handling import RangeError
from src.utils.logging_utils import get_logger

# Logging configuration
logger = get_logger("SigCore")

DDS_BITS = 48
DDS_MODULUS = 1 << DDS_BITS
AMPLITUDE_BITS = 14
AMPLITUDE_FULL_SCALE = (1 << AMPLITUDE_BITS) - 1
DEFAULT_SYSTEM_CLOCK_HZ = 1.0e9

ArrayLike = Union[float, np.ndarray]


# ---------------------------------------------------------------------
# Direct digital synthesis
# ---------------------------------------------------------------------
@dataclass(frozen=True)
class DdsChannel:
    """
    Numerically controlled oscillator with a 48-bit tuning word and phase accumulator.

    Output frequency is tuning_word / 2**48 * system_clock_hz.
    """
    tuning_word: int = 0
    phase_accumulator: int = 0
    amplitude: int = AMPLITUDE_FULL_SCALE
    system_clock_hz: float = DEFAULT_SYSTEM_CLOCK_HZ

    def __post_init__(self):
        if not 0 <= self.tuning_word < DDS_MODULUS:
            raise RangeError(f"Tuning word {self.tuning_word} does not fit in {DDS_BITS} bits.")
        if not 0 <= self.amplitude <= AMPLITUDE_FULL_SCALE:
            raise RangeError(f"Amplitude {self.amplitude} does not fit in {AMPLITUDE_BITS} bits.")
        if self.system_clock_hz <= 0:
            raise RangeError("System clock must be positive.")
        object.__setattr__(self, "phase_accumulator", self.phase_accumulator % DDS_MODULUS)

    @property
    def resolution_hz(self) -> float:
        return self.system_clock_hz / DDS_MODULUS

    @property
    def frequency_hz(self) -> float:
        return self.tuning_word * self.system_clock_hz / DDS_MODULUS

    @property
    def phase_cycles(self) -> float:
        return self.phase_accumulator / DDS_MODULUS

    def with_frequency(self, target_hz: float) -> "DdsChannel":
        """Return a copy retuned to the nearest representable frequency (phase is continuous)."""
        return replace(self, tuning_word=set_ftw(target_hz, self.system_clock_hz))

    def with_amplitude(self, amplitude: int) -> "DdsChannel":
        return replace(self, amplitude=int(amplitude))


def set_ftw(target_hz: float, system_clock_hz: float = DEFAULT_SYSTEM_CLOCK_HZ) -> int:
    """
    Compute the 48-bit frequency tuning word nearest to target_hz.

    Args:
        target_hz (float): Requested output frequency, 0 <= f < system_clock_hz / 2.
        system_clock_hz (float): DDS reference clock.

    Returns:
        int: round(target_hz / system_clock_hz * 2**48), computed exactly.

    Raises:
        RangeError: If the target is negative, non-finite, or at/above Nyquist.
    """
    if not math.isfinite(target_hz) or not math.isfinite(system_clock_hz) or system_clock_hz <= 0:
        raise RangeError(f"Invalid DDS request: target={target_hz}, clock={system_clock_hz}.")
    if target_hz < 0 or target_hz >= system_clock_hz / 2:
        raise RangeError(
            f"Target {target_hz} Hz outside DDS range [0, {system_clock_hz / 2}) Hz (Nyquist)."
        )
    exact = Fraction(target_hz) / Fraction(system_clock_hz) * DDS_MODULUS
    return int(math.floor(exact + Fraction(1, 2)))


def dds_tick(chan: DdsChannel, n_cycles: int) -> Tuple[DdsChannel, float]:
    """
    Advance a DDS phase accumulator by n_cycles system-clock cycles.

    Returns:
        Tuple[DdsChannel, float]: Updated channel and emitted phase in cycles [0, 1).
    """
    if n_cycles < 0:
        raise RangeError(f"Cannot tick a DDS backwards ({n_cycles} cycles).")
    accumulator = (chan.phase_accumulator + int(n_cycles) * chan.tuning_word) % DDS_MODULUS
    updated = replace(chan, phase_accumulator=accumulator)
    return updated, accumulator / DDS_MODULUS


def dds_phase_advance(chan: DdsChannel, n_cycles: int) -> float:
    """Fractional phase (cycles) a DDS accumulates over n_cycles, computed in exact integer arithmetic."""
    return ((int(n_cycles) * chan.tuning_word) % DDS_MODULUS) / DDS_MODULUS


# ---------------------------------------------------------------------
# Detection, prescaling, averaging
# ---------------------------------------------------------------------
def wrap_cycles(value: ArrayLike) -> ArrayLike:
    """Wrap a phase in cycles into (-1/2, 1/2]."""
    wrapped = np.asarray(value, dtype=float) - np.ceil(np.asarray(value, dtype=float) - 0.5)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


def phase_frequency_detect(ref_phase: ArrayLike, input_phase: ArrayLike,
                           gain_volts_per_cycle: float) -> ArrayLike:
    """
    Idealized phase detector: gain * wrap(input_phase - ref_phase).

    Args:
        ref_phase: Reference phase in cycles.
        input_phase: Measured phase in cycles.
        gain_volts_per_cycle: Mixer/LPF conversion gain.

    Returns:
        Detector output in volts, inside (-gain/2, gain/2].

    Raises:
        RangeError: If any input is non-finite.
    """
    ref = np.asarray(ref_phase, dtype=float)
    inp = np.asarray(input_phase, dtype=float)
    if not (np.all(np.isfinite(ref)) and np.all(np.isfinite(inp)) and math.isfinite(gain_volts_per_cycle)):
        raise RangeError("Phase detector received a non-finite input.")
    return gain_volts_per_cycle * wrap_cycles(inp - ref)


def prescale(freq_hz: float, n: int) -> float:
    """Divide a frequency by an integer 1/N prescaler."""
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise RangeError(f"Prescaler ratio must be an integer >= 1, got {n}.")
    return freq_hz / int(n)


def boxcar_average(samples: Sequence[float], n: int) -> float:
    """
    Mean of exactly n samples (the averaging filter ahead of the PI loop).

    Raises:
        RangeError: If n < 1 or the sample count differs from n.
    """
    if n < 1:
        raise RangeError(f"Averaging length must be >= 1, got {n}.")
    values = np.asarray(samples, dtype=float)
    if values.size != n:
        raise RangeError(f"Boxcar expected {n} samples, got {values.size}.")
    return float(values.mean())


# ---------------------------------------------------------------------
# ADC
# ---------------------------------------------------------------------
@dataclass(frozen=True)
class AdcSpec:
    """
    ADC model: resolution, span, conversion rate and additive Gaussian input noise.

    Bipolar spans use offset binary with midscale at 0 V.
    """
    resolution_bits: int = 16
    full_scale_volts: float = 20.0
    sample_rate_hz: float = 1.0e6
    input_noise_rms_volts: float = 0.0
    bipolar: bool = True

    def __post_init__(self):
        if self.resolution_bits < 1 or self.full_scale_volts <= 0 or self.sample_rate_hz <= 0:
            raise RangeError(f"Invalid ADC spec: {self}")
        if self.input_noise_rms_volts < 0:
            raise RangeError("ADC noise must be non-negative.")

    @property
    def max_code(self) -> int:
        return (1 << self.resolution_bits) - 1

    @property
    def midscale_code(self) -> int:
        return (1 << (self.resolution_bits - 1)) if self.bipolar else 0

    @property
    def lsb_volts(self) -> float:
        return self.full_scale_volts / (1 << self.resolution_bits)

    def code_to_volts(self, code: ArrayLike) -> ArrayLike:
        volts = (np.asarray(code, dtype=float) - self.midscale_code) * self.lsb_volts
        return float(volts) if np.ndim(volts) == 0 else volts

    def volts_to_code(self, volts: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
        """Round to nearest code; returns (clamped codes, saturation mask)."""
        raw = np.floor(np.asarray(volts, dtype=float) / self.lsb_volts + 0.5) + self.midscale_code
        saturated = (raw < 0) | (raw > self.max_code)
        return np.clip(raw, 0, self.max_code).astype(np.int64), saturated

    def quantize_array(self, volts: np.ndarray, rng: Optional[np.random.Generator] = None
                       ) -> Tuple[np.ndarray, np.ndarray, bool]:
        """Vectorized conversion: add noise, clamp, round. Returns (codes, volts, any_saturated)."""
        noisy = np.asarray(volts, dtype=float)
        if self.input_noise_rms_volts > 0:
            if rng is None:
                raise RangeError("A random generator is required for a noisy ADC.")
            noisy = noisy + rng.normal(0.0, self.input_noise_rms_volts, size=noisy.shape)
        codes, saturated = self.volts_to_code(noisy)
        return codes, np.asarray(self.code_to_volts(codes)), bool(np.any(saturated))


@dataclass(frozen=True)
class ErrorSample:
    """One digitized error sample."""
    adc_code: int
    volts: float
    timestep_index: int = 0
    saturated: bool = False


def adc_quantize(volts: float, spec: AdcSpec, rng: Optional[np.random.Generator] = None,
                 timestep_index: int = 0) -> ErrorSample:
    """
    Digitize one voltage: add Gaussian input noise, clamp to full scale, round to nearest code.

    Saturation is not an error; it is flagged on the returned sample.
    """
    codes, converted, saturated = spec.quantize_array(np.asarray([volts], dtype=float), rng)
    if saturated:
        logger.debug(f"ADC saturated at step {timestep_index} ({volts} V).")
    return ErrorSample(
        adc_code=int(codes[0]),
        volts=float(converted[0]),
        timestep_index=timestep_index,
        saturated=saturated,
    )


# ---------------------------------------------------------------------
# Analog RC filters
# ---------------------------------------------------------------------
@dataclass(frozen=True)
class RcStage:
    """Single-pole low-pass stage, from R and C or from an explicit cutoff."""
    resistance_ohm: Optional[float] = None
    capacitance_farad: Optional[float] = None
    cutoff: Optional[float] = None
    label: str = ""

    def __post_init__(self):
        if self.cutoff is None and (self.resistance_ohm is None or self.capacitance_farad is None):
            raise RangeError("RC stage needs either R and C or an explicit cutoff.")
        if self.cutoff_hz <= 0:
            raise RangeError(f"RC stage cutoff must be positive, got {self.cutoff_hz}.")

    @property
    def cutoff_hz(self) -> float:
        if self.cutoff is not None:
            return float(self.cutoff)
        return 1.0 / (2.0 * math.pi * self.resistance_ohm * self.capacitance_farad)

    def magnitude(self, f_hz: ArrayLike) -> ArrayLike:
        ratio = np.asarray(f_hz, dtype=float) / self.cutoff_hz
        gain = 1.0 / np.sqrt(1.0 + ratio * ratio)
        return float(gain) if np.ndim(gain) == 0 else gain


@dataclass(frozen=True)
class FilterChain:
    """Ordered cascade of RC stages."""
    stages: Tuple[RcStage, ...] = field(default_factory=tuple)

    @classmethod
    def default_dac_chain(cls) -> "FilterChain":
        """1 kOhm / 470 pF board RC (~340 kHz) followed by the 800 kHz in-line filter."""
        return cls(stages=(
            RcStage(resistance_ohm=1.0e3, capacitance_farad=470e-12, label="board RC"),
            RcStage(cutoff=800e3, label="in-line pi filter"),
        ))

    @property
    def max_cutoff_hz(self) -> float:
        return max((stage.cutoff_hz for stage in self.stages), default=0.0)


def rc_cascade_response(chain: FilterChain, f_hz: ArrayLike) -> ArrayLike:
    """
    Magnitude response of a filter chain: product of single-pole stage responses.

    Raises:
        RangeError: If any frequency is negative.
    """
    freqs = np.asarray(f_hz, dtype=float)
    if np.any(freqs < 0) or not np.all(np.isfinite(freqs)):
        raise RangeError("Filter response requested at a negative or non-finite frequency.")
    gain = np.ones_like(freqs)
    for stage in chain.stages:
        gain = gain * stage.magnitude(freqs)
    return float(gain) if np.ndim(gain) == 0 else gain
