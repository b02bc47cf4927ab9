"""
100-channel DAC sequencer
-------------------------
Voltage-set programs, linear interpolation between sets at a user-defined
update rate, synchronous / asynchronous execution with zero-order-hold
output synthesis, and the analog filter chain on the electrode lines.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import signal

from src.base.sigcore import FilterChain
from src.utils.error_handling import ProgramError, RangeError, UnderSampledError
from src.utils.logging_utils import get_logger

# Logging configuration
logger = get_logger("DacSystem")

NUM_DAC_CHANNELS = 100
DAC_BITS = 16
DAC_MAX_CODE = (1 << DAC_BITS) - 1
DAC_MIN_VOLTS = -10.0
DAC_SPAN_VOLTS = 20.0
DAC_LSB_VOLTS = DAC_SPAN_VOLTS / (1 << DAC_BITS)
MAX_UPDATE_RATE_HZ = 430.0e3
BLOCK_MEMORY_SETS = 32
RAM_SETS = 8_000_000
MODES = ("synchronous", "asynchronous", "interleaved")
MIN_OVERSAMPLING = 10
MIN_FILTER_OVERSAMPLING = 4


# ---------------------------------------------------------------------
# Codes and voltages
# ---------------------------------------------------------------------
def code_to_voltage(code: int) -> float:
    """
    Offset-binary code to volts: -10 + code * 20/65536 (exact in binary floating point).

    Raises:
        RangeError: If code is not an integer in [0, 65535].
    """
    if isinstance(code, bool) or int(code) != code or not 0 <= code <= DAC_MAX_CODE:
        raise RangeError(f"DAC code {code} outside [0, {DAC_MAX_CODE}].")
    return DAC_MIN_VOLTS + int(code) * DAC_SPAN_VOLTS / (1 << DAC_BITS)


def codes_to_voltages(codes: np.ndarray) -> np.ndarray:
    return DAC_MIN_VOLTS + np.asarray(codes, dtype=float) * DAC_LSB_VOLTS


def voltage_to_code(volts: Union[float, np.ndarray]) -> Union[int, np.ndarray]:
    """Nearest code to a voltage, clamped to the 16-bit range."""
    raw = np.floor((np.asarray(volts, dtype=float) - DAC_MIN_VOLTS) / DAC_LSB_VOLTS + 0.5)
    codes = np.clip(raw, 0, DAC_MAX_CODE).astype(np.int64)
    return int(codes) if np.ndim(codes) == 0 else codes


@dataclass(frozen=True)
class VoltageSet:
    """One code per electrode channel."""
    codes: np.ndarray

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.shape != (NUM_DAC_CHANNELS,):
            raise ProgramError(f"A voltage set needs {NUM_DAC_CHANNELS} codes, got shape {codes.shape}.")
        if not np.issubdtype(codes.dtype, np.integer):
            if not np.all(np.equal(np.mod(codes, 1), 0)):
                raise ProgramError("Voltage set codes must be integers.")
        if codes.min() < 0 or codes.max() > DAC_MAX_CODE:
            raise ProgramError(f"Voltage set codes must lie in [0, {DAC_MAX_CODE}].")
        object.__setattr__(self, "codes", codes.astype(np.int64))

    @classmethod
    def from_voltages(cls, volts: Sequence[float]) -> "VoltageSet":
        return cls(codes=np.atleast_1d(voltage_to_code(np.asarray(volts, dtype=float))))

    @property
    def voltages(self) -> np.ndarray:
        return codes_to_voltages(self.codes)

    def __eq__(self, other) -> bool:
        return isinstance(other, VoltageSet) and np.array_equal(self.codes, other.codes)


# ---------------------------------------------------------------------
# Programs
# ---------------------------------------------------------------------
@dataclass(frozen=True)
class DacTimingSpec:
    """
    Converter timing. Settling is a single pole sized so a full-scale swing
    reaches 1 LSB within settle_time_us; each update also injects a digital
    feedthrough glitch of glitch_volts lasting response_time_ns.
    """
    response_time_ns: float = 20.0
    settle_time_us: float = 8.0
    update_word_time_ns: float = 2000.0
    glitch_volts: float = 0.0

    def __post_init__(self):
        if min(self.response_time_ns, self.settle_time_us, self.update_word_time_ns) <= 0:
            raise ProgramError("DAC timing values must be positive.")

    @property
    def settle_tau_s(self) -> float:
        return self.settle_time_us * 1e-6 / math.log(1 << DAC_BITS)


@dataclass(frozen=True)
class DacNoiseSpec:
    """Random +/- dither_lsb per update and white baseline noise on the output."""
    dither_lsb: int = 0
    baseline_noise_rms_volts: float = 0.0


@dataclass(frozen=True)
class VoltageProgram:
    sets: tuple
    steps_between: tuple
    update_rate_hz: float
    mode: str
    tier: str

    @property
    def n_updates(self) -> int:
        return 1 + int(sum(self.steps_between))


def load_program(sets: Sequence[Union[VoltageSet, Sequence[int]]], steps: Union[int, Sequence[int]],
                 update_rate_hz: float, mode: str = "synchronous") -> VoltageProgram:
    """
    Validate a program and classify its memory tier (block memory up to 32 sets, RAM up to 8M).

    Raises:
        ProgramError: With one line per problem found.
    """
    problems: List[str] = []
    if not 0 < update_rate_hz <= MAX_UPDATE_RATE_HZ:
        problems.append(f"update rate {update_rate_hz} Hz exceeds the {MAX_UPDATE_RATE_HZ:.0f} Hz maximum"
                        if update_rate_hz > 0 else f"update rate must be positive, got {update_rate_hz}")
    if mode not in MODES:
        problems.append(f"mode '{mode}' is not one of {MODES}")
    if not sets:
        problems.append("a program needs at least one voltage set")
    elif len(sets) > RAM_SETS:
        problems.append(f"{len(sets)} sets exceed the {RAM_SETS} set RAM limit")

    parsed: List[VoltageSet] = []
    for index, item in enumerate(sets or []):
        try:
            parsed.append(item if isinstance(item, VoltageSet) else VoltageSet(codes=np.asarray(item)))
        except ProgramError as e:
            problems.append(f"set {index}: {e}")

    transitions = max(len(sets or []) - 1, 0)
    step_list = [steps] * transitions if isinstance(steps, (int, np.integer)) else list(steps)
    if len(step_list) != transitions:
        problems.append(f"expected {transitions} step counts, got {len(step_list)}")
    elif any(int(s) != s or s < 1 for s in step_list):
        problems.append("interpolation step counts must be integers >= 1")

    if problems:
        raise ProgramError("Invalid voltage program:\n" + "\n".join(f"  - {p}" for p in problems))

    tier = "block_memory" if len(parsed) <= BLOCK_MEMORY_SETS else "ram"
    if mode == "interleaved":
        logger.warning("Interleaved mode is recorded but cannot be executed.")
    logger.info(f"Loaded program: {len(parsed)} set(s), {tier} tier, {update_rate_hz:g} Hz, {mode}.")
    return VoltageProgram(
        sets=tuple(parsed),
        steps_between=tuple(int(s) for s in step_list),
        update_rate_hz=float(update_rate_hz),
        mode=mode,
        tier=tier,
    )


def load_program_file(path: Union[str, Path], steps: Union[int, Sequence[int]], update_rate_hz: float,
                      mode: str = "synchronous") -> VoltageProgram:
    """
    Read a text program: one set per line, 100 whitespace-separated voltages.
    Blank lines and lines starting with '#' are skipped.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        logger.exception(f"Failed to read voltage program {path}")
        raise ProgramError(f"Cannot read voltage program {path}: {e}")

    sets: List[VoltageSet] = []
    problems: List[str] = []
    for number, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        try:
            volts = np.array([float(v) for v in text.split()])
        except ValueError as e:
            problems.append(f"line {number}: {e}")
            continue
        if volts.size != NUM_DAC_CHANNELS:
            problems.append(f"line {number}: expected {NUM_DAC_CHANNELS} voltages, got {volts.size}")
            continue
        if np.any(volts < DAC_MIN_VOLTS) or np.any(volts > DAC_MIN_VOLTS + DAC_SPAN_VOLTS):
            problems.append(f"line {number}: voltages must lie within +/-10 V")
            continue
        sets.append(VoltageSet.from_voltages(volts))
    if problems:
        raise ProgramError(f"Invalid voltage program file {path}:\n" + "\n".join(f"  - {p}" for p in problems))
    return load_program(sets, steps, update_rate_hz, mode)


def interpolate_sets(a: VoltageSet, b: VoltageSet, steps: int) -> List[VoltageSet]:
    """
    Linear ramp from a to b: set j (1..steps) has codes round(a + j*(b - a)/steps).
    Excludes a, includes b.
    """
    if steps < 1:
        raise ProgramError(f"Interpolation needs at least one step, got {steps}.")
    a_codes, b_codes = a.codes, b.codes
    ramp = []
    for j in range(1, steps + 1):
        # floor((a*steps + j*(b - a)) / steps + 1/2) in integers
        numerator = 2 * (a_codes * steps + j * (b_codes - a_codes)) + steps
        ramp.append(VoltageSet(codes=numerator // (2 * steps)))
    return ramp


def expand_program(program: VoltageProgram) -> List[VoltageSet]:
    """The full update stream: first set, then each interpolated transition."""
    stream = [program.sets[0]]
    for (a, b), steps in zip(zip(program.sets[:-1], program.sets[1:]), program.steps_between):
        stream.extend(interpolate_sets(a, b, steps))
    return stream


# ---------------------------------------------------------------------
# Sequence execution
# ---------------------------------------------------------------------
@dataclass
class DacRun:
    """Sampled output of the selected channels plus one event per DAC update."""
    t_s: np.ndarray
    channels: List[int]
    volts: np.ndarray
    sample_rate_hz: float
    events: List[Dict] = field(default_factory=list)

    def waveform(self, channel: int) -> np.ndarray:
        return self.volts[self.channels.index(channel)]


def _settle(levels: np.ndarray, initial: np.ndarray, tau_s: float, dt_s: float) -> np.ndarray:
    pole = math.exp(-dt_s / tau_s)
    b, a = [1.0 - pole], [1.0, -pole]
    zi = (pole * initial)[:, None]
    out, _ = signal.lfilter(b, a, levels, axis=-1, zi=zi)
    return out


def run_sequence(program: VoltageProgram, timing: DacTimingSpec, duration_s: float, sim_rate_hz: float,
                 channels: Optional[Sequence[int]] = None, noise: Optional[DacNoiseSpec] = None,
                 seed: Optional[int] = None) -> DacRun:
    """
    Synthesize the DAC outputs for duration_s.

    Synchronous mode keeps updating at the program rate for the whole run,
    re-emitting the last set once the stream is exhausted. Asynchronous mode
    emits each set once and then halts its clocks, leaving only baseline noise.

    Raises:
        UnderSampledError: If sim_rate_hz is below 10x the update rate.
        ProgramError: For the interleaved mode or a bad channel subset.
    """
    if program.mode == "interleaved":
        raise ProgramError("Interleaved update mode is a recorded hypothesis and is not executable.")
    if sim_rate_hz < MIN_OVERSAMPLING * program.update_rate_hz:
        raise UnderSampledError(
            f"Simulation rate {sim_rate_hz} Hz is below {MIN_OVERSAMPLING}x the {program.update_rate_hz} Hz update rate."
        )
    channels = list(range(NUM_DAC_CHANNELS)) if channels is None else [int(c) for c in channels]
    if not channels or any(not 0 <= c < NUM_DAC_CHANNELS for c in channels):
        raise ProgramError(f"Channel subset must be non-empty with indices in [0, {NUM_DAC_CHANNELS - 1}].")
    noise = noise or DacNoiseSpec()
    rng = np.random.default_rng(seed)

    n_samples = int(round(duration_s * sim_rate_hz))
    dt = 1.0 / sim_rate_hz
    t = np.arange(n_samples) * dt
    stream = expand_program(program)
    period = 1.0 / program.update_rate_hz
    n_slots = int(math.ceil(duration_s * program.update_rate_hz - 1e-9))
    n_updates = n_slots if program.mode == "synchronous" else min(len(stream), n_slots)

    # Update instants on the simulation grid
    update_idx = np.ceil(np.arange(n_updates) * period * sim_rate_hz - 1e-9).astype(np.int64)
    update_idx = update_idx[update_idx < n_samples]
    n_updates = update_idx.size

    codes = np.empty((n_updates, len(channels)), dtype=np.int64)
    events: List[Dict] = []
    refresh_time_s = NUM_DAC_CHANNELS * timing.update_word_time_ns * 1e-9
    previous = None
    for j in range(n_updates):
        set_index = min(j, len(stream) - 1)
        target = stream[set_index].codes
        if noise.dither_lsb:
            target = np.clip(target + rng.integers(-noise.dither_lsb, noise.dither_lsb + 1, size=target.size),
                             0, DAC_MAX_CODE)
        codes[j] = target[channels]
        words = NUM_DAC_CHANNELS if program.mode == "synchronous" or previous is None \
            else int(np.count_nonzero(target != previous))
        refresh = words * timing.update_word_time_ns * 1e-9
        events.append({
            "t_s": float(update_idx[j] * dt),
            "set_index": set_index,
            "words": words,
            "refresh_time_s": refresh,
            "overrun": bool(refresh > period),
        })
        previous = target
    overruns = sum(event["overrun"] for event in events)
    if overruns:
        logger.warning(f"{overruns} update(s) need {refresh_time_s * 1e6:.0f} us to serialize, "
                       f"longer than the {period * 1e6:.3g} us update period.")

    # Zero-order hold onto the simulation grid
    initial = codes_to_voltages(stream[0].codes[channels])
    if n_updates:
        which = np.searchsorted(update_idx, np.arange(n_samples), side="right") - 1
        held = codes_to_voltages(codes)
        levels = np.where(which[None, :] >= 0, held[np.clip(which, 0, None)].T, initial[:, None])
    else:
        levels = np.repeat(initial[:, None], n_samples, axis=1)
    volts = _settle(levels, initial, timing.settle_tau_s, dt)

    if timing.glitch_volts and n_updates:
        width = max(1, int(round(timing.response_time_ns * 1e-9 * sim_rate_hz)))
        height = timing.glitch_volts * timing.response_time_ns * 1e-9 / (width * dt)
        for offset in range(width):
            idx = update_idx + offset
            volts[:, idx[idx < n_samples]] += height

    if noise.baseline_noise_rms_volts > 0:
        volts = volts + rng.normal(0.0, noise.baseline_noise_rms_volts, size=volts.shape)

    logger.info(f"Ran {program.mode} sequence: {n_updates} update(s), {len(channels)} channel(s), "
                f"{n_samples} samples at {sim_rate_hz:g} Hz.")
    return DacRun(t_s=t, channels=channels, volts=volts, sample_rate_hz=sim_rate_hz, events=events)


def apply_filter_chain(waveform: np.ndarray, fs_hz: float, chain: FilterChain) -> np.ndarray:
    """
    Filter a uniformly sampled waveform (last axis is time) through an RC cascade.

    Each stage is discretized with the bilinear transform prewarped at its cutoff
    and starts in steady state with the first sample, so DC passes unchanged.

    Raises:
        UnderSampledError: If fs_hz is below 4x the highest stage cutoff.
    """
    if fs_hz < MIN_FILTER_OVERSAMPLING * chain.max_cutoff_hz:
        raise UnderSampledError(
            f"Sample rate {fs_hz} Hz is below {MIN_FILTER_OVERSAMPLING}x the {chain.max_cutoff_hz} Hz cutoff."
        )
    out = np.asarray(waveform, dtype=float)
    for stage in chain.stages:
        warped = 2.0 * fs_hz * math.tan(math.pi * stage.cutoff_hz / fs_hz)
        b, a = signal.bilinear([warped], [1.0, warped], fs=fs_hz)
        zi = signal.lfilter_zi(b, a)
        initial = out[..., :1] * zi
        out, _ = signal.lfilter(b, a, out, axis=-1, zi=initial)
    return out
