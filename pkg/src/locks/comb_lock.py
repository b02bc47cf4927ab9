"""
Digital optical-frequency-comb lock
-----------------------------------
A digital PLL locks DDS0 (f_0) to the laser repetition rate; every change
the PI loop makes to f_0 is fed forward, multiplied by the comb tooth index
n, to the AOM tone f_2 so that f_qubit = n*f_rep +/- (f_1 - f_2) keeps holding.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.analysis.metrics import linreg_residual, step_response_metrics
from src.base.lock_base import (
    LockBase,
    LockDetector,
    PiController,
    Trajectory,
    bisect_gain,
    pi_step,
)
from src.base.plant import RepRatePlant, rep_rate_evolve
from src.base.sigcore import (
    AdcSpec,
    DdsChannel,
    boxcar_average,
    dds_phase_advance,
    dds_tick,
    phase_frequency_detect,
)
from src.utils.error_handling import (
    FeedForwardRangeError,
    RangeError,
    SimulationError,
)
from src.utils.logging_utils import get_logger

# Logging configuration
logger = get_logger("CombLock")


@dataclass(frozen=True)
class CombLockConfig:
    """
    Comb lock parameters.

    detector_gain_v_per_hz is the discriminator slope: the per-sample phase-advance
    difference, scaled by the sample rate, in volts per hertz of f_rep - f_0.
    mixer_limit_v is the mixer output swing, i.e. the saturated error.
    """
    n_harmonic: int = 166
    f_qubit_hz: float = 12.6e9
    f1_hz: float = 200.0e6
    oversample_n: int = 16
    sample_rate_hz: float = 1.0e6
    sign: int = 1
    detector_gain_v_per_hz: float = 1.0
    mixer_limit_v: float = 0.2
    adc: AdcSpec = field(default_factory=AdcSpec)
    aom_min_hz: float = 150.0e6
    aom_max_hz: float = 250.0e6
    lock_threshold_hz: float = 1.0
    lock_dwell: int = 100
    system_clock_hz: float = 1.0e9

    def __post_init__(self):
        if self.n_harmonic < 1:
            raise RangeError(f"Comb tooth index must be >= 1, got {self.n_harmonic}.")
        if self.sign not in (1, -1):
            raise RangeError(f"Sign must be +1 or -1, got {self.sign}.")
        if self.oversample_n < 1:
            raise RangeError("Oversample ratio must be >= 1.")
        if self.sample_rate_hz > self.adc.sample_rate_hz:
            raise RangeError(
                f"Sample rate {self.sample_rate_hz} Hz exceeds the ADC limit {self.adc.sample_rate_hz} Hz."
            )
        if not self.aom_min_hz < self.aom_max_hz:
            raise RangeError("AOM range is empty.")
        cycles = self.system_clock_hz / self.sample_rate_hz
        if abs(cycles - round(cycles)) > 1e-9 * cycles:
            raise RangeError("System clock must be an integer multiple of the sample rate.")

    @property
    def loop_rate_hz(self) -> float:
        """Effective loop rate: the ADC rate divided by the averaging length."""
        return self.sample_rate_hz / self.oversample_n

    @property
    def detector_gain_v_per_cycle(self) -> float:
        return self.detector_gain_v_per_hz * self.sample_rate_hz

    @property
    def clock_cycles_per_sample(self) -> int:
        return int(round(self.system_clock_hz / self.sample_rate_hz))

    @property
    def aom_range(self) -> Tuple[float, float]:
        return self.aom_min_hz, self.aom_max_hz


class LockTrajectory(Trajectory):
    """Per effective sample: k, time, f_rep, f_0, f_2, averaged error, residual detuning, lock flag."""
    COLUMNS = ("k", "t_s", "f_rep_hz", "f0_hz", "f2_hz", "error_v", "residual_hz", "locked")


# -------------------------------
# Resonance algebra
# -------------------------------
def resonance_residual(f_rep, f1, f2, config: CombLockConfig):
    """Detuning n*f_rep + sign*(f1 - f2) - f_qubit; zero when the comb pair is resonant."""
    return (config.n_harmonic * f_rep - config.f_qubit_hz) + config.sign * (f1 - f2)


def initial_f2(f_rep_hz: float, config: CombLockConfig) -> float:
    """
    Solve the resonance condition for f_2.

    Raises:
        FeedForwardRangeError: If the solution is outside the AOM tunable range.
    """
    f2 = config.f1_hz - config.sign * (config.f_qubit_hz - config.n_harmonic * f_rep_hz)
    if not config.aom_min_hz <= f2 <= config.aom_max_hz:
        raise FeedForwardRangeError(
            f"No resonant f2 within the AOM range for f_rep={f_rep_hz} Hz (needs {f2} Hz)."
        )
    return f2


def feed_forward(f2_hz, n_harmonic: int, delta_hz, sign: int = 1,
                 aom_range: Optional[Tuple[float, float]] = None):
    """
    Feed the n-th harmonic of a repetition-rate change forward to the AOM tone.
    Works elementwise on arrays.

    Returns:
        f2 + sign * n * delta.

    Raises:
        FeedForwardRangeError: If the result leaves aom_range.
    """
    if not (np.all(np.isfinite(f2_hz)) and np.all(np.isfinite(delta_hz))):
        raise FeedForwardRangeError("Feed-forward received a non-finite frequency.")
    f2 = f2_hz + sign * n_harmonic * delta_hz
    if aom_range is not None and (np.any(f2 < aom_range[0]) or np.any(f2 > aom_range[1])):
        raise FeedForwardRangeError(
            f"Fed-forward f2 = {np.min(f2)}..{np.max(f2)} Hz left the AOM range "
            f"[{aom_range[0]}, {aom_range[1]}] Hz."
        )
    return f2


# -------------------------------
# The lock
# -------------------------------
class CombLock(LockBase):
    """
    Digital PLL + feed-forward.

    Per effective sample: evolve the plant, compare the phase advance of
    f_rep and DDS0 over each raw ADC sample, digitize, average N samples,
    run the PI law, take delta as the commanded change of f_0 and feed
    n*delta forward to f_2.
    """

    def __init__(self, plant: RepRatePlant, config: CombLockConfig, pi: PiController,
                 steps: Sequence[Tuple[float, float]] = (), adc_seed: Optional[int] = None,
                 name: str = "comb", strict: bool = False):
        super().__init__(name=name, strict=strict)
        self.plant = plant
        self.config = config
        self.pi = pi
        self.steps = sorted(steps)
        self._adc_rng = np.random.default_rng(adc_seed)

    def _error_window(self, f_rep_hz: float, dds0: DdsChannel) -> Tuple[float, bool]:
        cfg = self.config
        ref_advance = dds_phase_advance(dds0, cfg.clock_cycles_per_sample)
        input_advance = math.fmod(f_rep_hz / cfg.sample_rate_hz, 1.0)
        volts = phase_frequency_detect(ref_advance, input_advance, cfg.detector_gain_v_per_cycle)
        volts = min(max(volts, -cfg.mixer_limit_v), cfg.mixer_limit_v)
        _, converted, saturated = cfg.adc.quantize_array(
            np.full(cfg.oversample_n, volts), self._adc_rng
        )
        return boxcar_average(converted, cfg.oversample_n), saturated

    def run(self, duration_s: float) -> LockTrajectory:
        cfg = self.config
        dt = 1.0 / cfg.loop_rate_hz
        n_steps = int(round(duration_s * cfg.loop_rate_hz))
        trajectory = LockTrajectory()

        plant = self.plant
        pi = self.pi.reset(output_hz=self.pi.output_hz or plant.f_rep_hz)
        dds0 = DdsChannel(system_clock_hz=cfg.system_clock_hz).with_frequency(pi.output_hz)
        f2 = initial_f2(pi.output_hz, cfg)
        detector = LockDetector(cfg.lock_threshold_hz, cfg.lock_dwell)
        pending_steps = list(self.steps)
        acquired_logged = False

        logger.info(
            f"{self.name}: running {n_steps} steps at {cfg.loop_rate_hz:g} Hz "
            f"(N={cfg.oversample_n}, P={pi.p_gain:g}, I={pi.i_gain:g})."
        )
        for k in range(n_steps):
            t = k * dt
            try:
                while pending_steps and pending_steps[0][0] <= t:
                    _, delta = pending_steps.pop(0)
                    plant = plant.step(delta)
                plant = rep_rate_evolve(plant, dt)

                error, saturated = self._error_window(plant.f_rep_hz, dds0)
                if saturated:
                    logger.debug(f"{self.name}: ADC saturated at step {k}.")
                pi = pi_step(pi, error)
                self._check_controller(pi, k)

                f2 = feed_forward(f2, cfg.n_harmonic, pi.last_correction, cfg.sign, cfg.aom_range)
                dds0 = dds0.with_frequency(pi.output_hz)
                dds0, _ = dds_tick(dds0, cfg.clock_cycles_per_sample * cfg.oversample_n)
            except SimulationError as e:
                self.plant, self.pi = plant, pi
                return self._abort(trajectory, e)

            residual = resonance_residual(plant.f_rep_hz, cfg.f1_hz, f2, cfg)
            locked = detector.update(residual)
            if locked and not acquired_logged:
                logger.info(f"{self.name}: lock acquired at t={t:.4g} s.")
                acquired_logged = True
            trajectory.append(
                k=k, t_s=t, f_rep_hz=plant.f_rep_hz, f0_hz=pi.output_hz, f2_hz=f2,
                error_v=error, residual_hz=residual, locked=float(locked),
            )

        self.plant, self.pi = plant, pi
        return trajectory


def comb_lock_run(plant: RepRatePlant, config: CombLockConfig, pi: PiController, duration_s: float,
                  steps: Sequence[Tuple[float, float]] = (), adc_seed: Optional[int] = None,
                  strict: bool = False) -> LockTrajectory:
    """Run the comb lock for duration_s; see CombLock."""
    return CombLock(plant, config, pi, steps=steps, adc_seed=adc_seed, strict=strict).run(duration_s)


# -------------------------------
# Slew calibration
# -------------------------------
def predicted_slew(p_gain: float, i_gain: float, e_sat: float, step_hz: float,
                   loop_rate_hz: float) -> float:
    """
    Slew (Hz/s) reached by the incremental PI law driven by a constant saturated
    error until the accumulated correction covers step_hz.
    """
    if e_sat <= 0 or step_hz <= 0:
        raise RangeError("Saturated error and step size must be positive.")
    accumulator = 0.0
    covered = 0.0
    increment = 0.0
    while covered < step_hz:
        accumulator += e_sat
        increment = p_gain * e_sat + i_gain * accumulator
        covered += increment
    return increment * loop_rate_hz


@dataclass
class SlewCalibration:
    p_gain: float
    i_gain: float
    measured_slew_hz_per_s: float
    p_candidates_tried: List[float]


def measure_step_slew(config: CombLockConfig, p_gain: float, i_gain: float, step_hz: float = 100.0,
                      step_time_s: float = 1.0, duration_s: float = 10.0,
                      f_rep_hz: float = 76.0e6) -> float:
    """Reacquisition slew of f_0 after an abrupt jump of a noise-free, DDS-like source."""
    trajectory = comb_lock_run(
        RepRatePlant(f_rep_hz=f_rep_hz),
        config,
        PiController(p_gain=p_gain, i_gain=i_gain, output_hz=f_rep_hz),
        duration_s,
        steps=[(step_time_s, step_hz)],
        adc_seed=0,
    )
    metrics = step_response_metrics(trajectory.column("t_s"), trajectory.column("f0_hz"),
                                    step_time_s=step_time_s)
    return metrics["slew_hz_per_s"]


def tracks_ramp(config: CombLockConfig, p_gain: float, i_gain: float, ramp_hz_per_s: float = 5.0,
                duration_s: float = 20.0, f_rep_hz: float = 76.0e6) -> Tuple[bool, float]:
    """Whether the lock holds the residual below threshold over the last quarter of a ramp run."""
    trajectory = comb_lock_run(
        RepRatePlant(f_rep_hz=f_rep_hz, drift_hz_per_s=ramp_hz_per_s),
        config,
        PiController(p_gain=p_gain, i_gain=i_gain, output_hz=f_rep_hz),
        duration_s,
        adc_seed=0,
    )
    if trajectory.aborted:
        return False, math.inf
    residual = trajectory.column("residual_hz")
    tail = np.abs(residual[3 * len(residual) // 4:])
    worst = float(tail.max()) if tail.size else math.inf
    return worst < config.lock_threshold_hz, worst


def calibrate_slew(config: CombLockConfig, target_slew_hz_per_s: float = 50.0, step_hz: float = 100.0,
                   p_candidates: Sequence[float] = (1.0, 0.5, 0.25),
                   ramp_hz_per_s: float = 5.0) -> SlewCalibration:
    """
    Step-response gain calibration with a DDS standing in for the laser.

    With P = 1, bisect I until the reacquisition slew equals the target; then
    keep the smallest P candidate that still tracks the expected drift ramp.
    """
    logger.info(f"Calibrating I for a {target_slew_hz_per_s} Hz/s slew at P=1.")
    i_gain, slew = bisect_gain(
        lambda i: measure_step_slew(config, 1.0, i, step_hz=step_hz),
        target_slew_hz_per_s, lo=0.0, hi=1e-3, rel_tol=0.01,
    )

    chosen_p = 1.0
    tried: List[float] = []
    for p in sorted(p_candidates):
        tried.append(p)
        ok, worst = tracks_ramp(config, p, i_gain, ramp_hz_per_s=ramp_hz_per_s)
        logger.debug(f"P={p}: ramp tracking {'ok' if ok else 'failed'} (worst tail residual {worst:.3g} Hz).")
        if ok:
            chosen_p = p
            break
    return SlewCalibration(p_gain=chosen_p, i_gain=i_gain, measured_slew_hz_per_s=slew,
                           p_candidates_tried=tried)


# -------------------------------
# Averaging study
# -------------------------------
def averaging_study(config: CombLockConfig, n_values: Sequence[int] = (1, 4, 16),
                    offsets_hz: Sequence[float] = (0.0, 0.05, -0.05, 0.1),
                    averaged_samples_per_segment: int = 2500, noise_rms_v: float = 0.35,
                    seed: int = 0) -> Dict[int, float]:
    """
    Unlocked error-signal noise versus averaging length.

    A DDS stands in for the laser and takes finite frequency steps; within each
    constant segment the averaged error is regressed on time and the residual
    variance (V^2) is pooled across segments.

    Returns:
        Dict[int, float]: N -> mean residual variance.
    """
    results: Dict[int, float] = {}
    adc = replace(config.adc, input_noise_rms_volts=noise_rms_v)
    for n in n_values:
        rng = np.random.default_rng([seed, n])
        loop_dt = n / config.sample_rate_hz
        variances = []
        for offset in offsets_hz:
            clean = phase_frequency_detect(0.0, offset / config.sample_rate_hz,
                                           config.detector_gain_v_per_cycle)
            clean = min(max(clean, -config.mixer_limit_v), config.mixer_limit_v)
            _, raw, _ = adc.quantize_array(np.full(n * averaged_samples_per_segment, clean), rng)
            averaged = [boxcar_average(block, n) for block in raw.reshape(-1, n)]
            times = np.arange(len(averaged)) * loop_dt
            variances.append(linreg_residual(list(zip(times, averaged))))
        results[n] = float(np.mean(variances))
        logger.info(f"Averaging N={n}: residual variance {results[n]:.4g} V^2 "
                    f"(loop rate {config.sample_rate_hz / n:g} Hz).")
    return results


# -------------------------------
# Feed-forward study
# -------------------------------
FEED_FORWARD_GRID_HZ = 2.0 ** -16


@dataclass
class FeedForwardStudy:
    """Worst-case resonance residuals over many random drift sequences."""
    n_sequences: int
    n_steps: int
    max_abs_residual_hz: float
    max_bound_excess_hz: float
    residual_trace_hz: np.ndarray

    @property
    def within_bound(self) -> bool:
        return self.max_bound_excess_hz <= 1e-6


def feed_forward_study(config: CombLockConfig, f_rep_hz: float = 76.0e6, n_sequences: int = 10_000,
                       n_steps: int = 100, drift_rms_hz: float = 0.5, tracking_error_rms_hz: float = 0.0,
                       seed: int = 0) -> FeedForwardStudy:
    """
    Apply the feed-forward update along random f_rep drift sequences.

    f_0 follows f_rep with an optional tracking error; every change of f_0 is fed
    forward to f_2. Drifts and tracking errors sit on a 2^-16 Hz grid so the
    frequency arithmetic is exact and a perfect tracker leaves zero residual.
    The bound checked per step is |residual| <= n * |f_0 - f_rep|.
    """
    if n_sequences < 1 or n_steps < 1:
        raise RangeError("The study needs at least one sequence of one step.")
    rng = np.random.default_rng(seed)

    def on_grid(values: np.ndarray) -> np.ndarray:
        return np.round(values / FEED_FORWARD_GRID_HZ) * FEED_FORWARD_GRID_HZ

    f_rep0 = float(on_grid(np.asarray(f_rep_hz)))
    f_rep = np.full(n_sequences, f_rep0)
    f0 = f_rep.copy()
    f2 = np.full(n_sequences, initial_f2(f_rep0, config))
    offset0 = resonance_residual(f_rep0, config.f1_hz, float(f2[0]), config)

    worst_residual = 0.0
    worst_excess = -math.inf
    trace = np.empty(n_steps)
    for k in range(n_steps):
        f_rep = f_rep + on_grid(rng.normal(0.0, drift_rms_hz, n_sequences))
        tracking = on_grid(rng.normal(0.0, tracking_error_rms_hz, n_sequences)) if tracking_error_rms_hz > 0 \
            else np.zeros(n_sequences)
        f0_next = f_rep + tracking
        f2 = feed_forward(f2, config.n_harmonic, f0_next - f0, config.sign, config.aom_range)
        f0 = f0_next

        residual = resonance_residual(f_rep, config.f1_hz, f2, config) - offset0
        bound = config.n_harmonic * np.abs(f0 - f_rep)
        worst_residual = max(worst_residual, float(np.max(np.abs(residual))))
        worst_excess = max(worst_excess, float(np.max(np.abs(residual) - bound)))
        trace[k] = residual[0]

    logger.info(f"Feed-forward over {n_sequences}x{n_steps} steps: max |residual| {worst_residual:.3g} Hz, "
                f"max excess over bound {worst_excess:.3g} Hz.")
    return FeedForwardStudy(n_sequences=n_sequences, n_steps=n_steps, max_abs_residual_hz=worst_residual,
                            max_bound_excess_hz=worst_excess, residual_trace_hz=trace)
