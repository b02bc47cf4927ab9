"""
CW offset frequency lock
------------------------
The master/slave beat note is divided by a 1/N prescaler and compared with a
DDS setpoint; a PI loop steers the piezo of the slave so the lasers sit
N * f_DDS apart. Several slaves may be locked to one master.
"""

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.base.lock_base import LockBase, PiController, Trajectory, pi_step
from src.base.plant import BeatNotePlant, detectable_beat
from src.base.sigcore import DdsChannel, phase_frequency_detect, prescale, set_ftw
from src.utils.error_handling import CaptureRangeError, RangeError, SimulationError
from src.utils.logging_utils import get_logger

# Logging configuration
logger = get_logger("OffsetLock")


@dataclass(frozen=True)
class OffsetLockConfig:
    """
    Offset lock parameters.

    sign = +1 locks the slave above the master, -1 below it; the beat note
    alone cannot tell the two apart. detector_noise_rms_v stands for the
    per-slave signal-to-noise ratio of the beat.
    """
    prescaler_n: int = 10
    f_dds_hz: float = 20.0e6
    pd_bandwidth_hz: float = 2.0e9
    p_gain: float = 5.0
    i_gain: float = 0.5
    sign: int = 1
    detector_gain_v_per_hz: float = 1.0
    detector_noise_rms_v: float = 0.0
    loop_rate_hz: float = 1.0e3
    piezo_bandwidth_hz: float = 1.0e3
    system_clock_hz: float = 1.0e9
    report_interval_s: float = 1.0

    def __post_init__(self):
        if isinstance(self.prescaler_n, bool) or int(self.prescaler_n) != self.prescaler_n or self.prescaler_n < 1:
            raise RangeError(f"Prescaler ratio must be an integer >= 1, got {self.prescaler_n}.")
        if self.sign not in (1, -1):
            raise RangeError(f"Sign must be +1 or -1, got {self.sign}.")
        set_ftw(self.f_dds_hz, self.system_clock_hz)
        if self.target_offset_hz > self.pd_bandwidth_hz:
            raise RangeError(
                f"Target offset {self.target_offset_hz} Hz exceeds the photodiode bandwidth {self.pd_bandwidth_hz} Hz."
            )
        if self.detector_noise_rms_v < 0 or self.loop_rate_hz <= 0 or self.piezo_bandwidth_hz <= 0:
            raise RangeError("Noise, loop rate and piezo bandwidth must be positive.")

    @property
    def target_offset_hz(self) -> float:
        return self.prescaler_n * self.f_dds_hz

    @property
    def piezo_pole(self) -> float:
        """Per-step retention of the first-order piezo lag."""
        return math.exp(-2.0 * math.pi * self.piezo_bandwidth_hz / self.loop_rate_hz)


def normalized_gains(prescaler_n: int, detector_gain_v_per_hz: float = 1.0, loop_gain: float = 0.5,
                     integral_ratio: float = 0.1) -> Tuple[float, float]:
    """P and I (Hz/V) that give a prescaler-independent per-step loop gain."""
    p_gain = loop_gain * prescaler_n / detector_gain_v_per_hz
    return p_gain, integral_ratio * p_gain


class OffsetTrajectory(Trajectory):
    """Full-rate internal log of one slave lock."""
    COLUMNS = ("k", "t_s", "beat_hz", "target_hz", "beat_error_hz", "error_v", "slave_hz", "command_hz")

    def reported(self, interval_s: float = 1.0) -> np.ndarray:
        """Beat error averaged over complete interval_s windows: rows (t_s, beat_error_hz)."""
        t = self.column("t_s")
        error = self.column("beat_error_hz")
        if not len(self):
            return np.empty((0, 2))
        dt = t[1] - t[0] if t.size > 1 else interval_s
        per_window = max(int(round(interval_s / dt)), 1)
        windows = error.size // per_window
        if windows == 0:
            return np.empty((0, 2))
        means = error[:windows * per_window].reshape(windows, per_window).mean(axis=1)
        return np.column_stack([t[0] + np.arange(windows) * interval_s, means])


def detector_gate_s(max_frequency_hz: float) -> float:
    """
    Phase-comparison gate of the offset-lock detector.

    Over a gate of 1/(4*f_max) no frequency difference below f_max advances the
    phase by more than a quarter cycle, so the wrapped phase difference stays
    proportional to the frequency error across the whole capture range.
    """
    if not max_frequency_hz > 0:
        raise RangeError(f"Detector gate needs a positive frequency, got {max_frequency_hz}.")
    return 1.0 / (4.0 * max_frequency_hz)


# -------------------------------
# Single step
# -------------------------------
def offset_lock_step(master_hz: float, slave_hz: float, config: OffsetLockConfig, pi: PiController,
                     dds: Optional[DdsChannel] = None, noise_v: float = 0.0,
                     pd_bandwidth_hz: Optional[float] = None) -> Tuple[float, PiController, float]:
    """
    One detector sample and PI update.

    Returns:
        Tuple[float, PiController, float]: (slave frequency correction in Hz,
        updated controller, error volts).

    Raises:
        CaptureRangeError: If the beat note is undetectable.
    """
    bandwidth = config.pd_bandwidth_hz if pd_bandwidth_hz is None else pd_bandwidth_hz
    beat = detectable_beat(master_hz, slave_hz, bandwidth)
    if beat is None:
        raise CaptureRangeError(
            f"Beat note {abs(master_hz - slave_hz)} Hz is outside the {bandwidth} Hz photodiode bandwidth."
        )
    if dds is None:
        dds = DdsChannel(system_clock_hz=config.system_clock_hz).with_frequency(config.f_dds_hz)
    gate_s = detector_gate_s(max(bandwidth, config.pd_bandwidth_hz, dds.frequency_hz))
    error = phase_frequency_detect(dds.frequency_hz * gate_s, prescale(beat, config.prescaler_n) * gate_s,
                                   config.detector_gain_v_per_hz / gate_s) + noise_v
    pi = pi_step(pi, error)
    return -config.sign * pi.last_correction, pi, error


# -------------------------------
# Lock runner
# -------------------------------
class OffsetLock(LockBase):
    """One slave laser offset-locked to a master."""

    def __init__(self, plant: BeatNotePlant, config: OffsetLockConfig, pi: PiController,
                 retunes: Sequence[Tuple[float, float]] = (), detector_seed: Optional[int] = None,
                 name: str = "slave", strict: bool = False):
        super().__init__(name=name, strict=strict)
        if plant.pd_bandwidth_hz != config.pd_bandwidth_hz:
            logger.debug(f"{name}: plant photodiode bandwidth {plant.pd_bandwidth_hz} Hz overrides config.")
        self.plant = plant
        self.config = config
        self.pi = pi.reset(output_hz=0.0)
        self.retunes = sorted(retunes)
        self.dds = DdsChannel(system_clock_hz=config.system_clock_hz).with_frequency(config.f_dds_hz)
        self.command_hz = plant.slave_hz
        self.trajectory = OffsetTrajectory()
        self._detector_rng = np.random.default_rng(detector_seed)
        self._k = 0
        self._stopped = False

    @property
    def stopped(self) -> bool:
        return self._stopped

    def step(self) -> None:
        """Advance the lock by one loop period."""
        if self._stopped:
            return
        cfg = self.config
        t = self._k / cfg.loop_rate_hz
        try:
            while self.retunes and self.retunes[0][0] <= t:
                _, f_dds = self.retunes.pop(0)
                self.dds = self.dds.with_frequency(f_dds)
                logger.info(f"{self.name}: DDS setpoint retuned to {f_dds} Hz at t={t:.4g} s.")

            noise = self._detector_rng.normal(0.0, cfg.detector_noise_rms_v) if cfg.detector_noise_rms_v > 0 else 0.0
            correction, self.pi, error = offset_lock_step(
                self.plant.master_hz, self.plant.slave_hz, cfg, self.pi,
                dds=self.dds, noise_v=noise, pd_bandwidth_hz=self.plant.pd_bandwidth_hz,
            )
            self._check_controller(self.pi, self._k)
        except SimulationError as e:
            self._stopped = True
            self._abort(self.trajectory, e)
            return

        beat = abs(self.plant.master_hz - self.plant.slave_hz)
        target = cfg.prescaler_n * self.dds.frequency_hz
        self.trajectory.append(
            k=self._k, t_s=t, beat_hz=beat, target_hz=target, beat_error_hz=beat - target,
            error_v=error, slave_hz=self.plant.slave_hz, command_hz=self.command_hz,
        )

        self.command_hz += correction
        pole = cfg.piezo_pole
        slave = pole * self.plant.slave_hz + (1.0 - pole) * self.command_hz + self.plant.slave_noise_draw()
        self.plant = self.plant.with_slave(slave)
        self._k += 1

    def run(self, duration_s: float) -> OffsetTrajectory:
        n_steps = int(round(duration_s * self.config.loop_rate_hz))
        logger.info(f"{self.name}: offset lock to {self.config.target_offset_hz:g} Hz for {n_steps} steps.")
        for _ in range(n_steps):
            if self._stopped:
                break
            self.step()
        return self.trajectory


def offset_lock_run(plant: BeatNotePlant, config: OffsetLockConfig, duration_s: float,
                    pi: Optional[PiController] = None, retunes: Sequence[Tuple[float, float]] = (),
                    detector_seed: Optional[int] = None, strict: bool = False) -> OffsetTrajectory:
    """
    Run one offset lock. Use OffsetTrajectory.reported() for the once-per-interval
    beat error record that feeds allan_deviation.
    """
    pi = pi or PiController(p_gain=config.p_gain, i_gain=config.i_gain)
    return OffsetLock(plant, config, pi, retunes=retunes, detector_seed=detector_seed,
                      strict=strict).run(duration_s)


def run_offset_locks(master_hz: float, slaves: Sequence[Tuple[BeatNotePlant, OffsetLockConfig, Optional[int]]],
                     duration_s: float, retunes: Optional[Sequence[Sequence[Tuple[float, float]]]] = None,
                     strict: bool = False) -> List[OffsetTrajectory]:
    """
    Lock several slaves to one master, stepping them together.

    Each entry is (plant, config, detector_seed); plants carry their own RNG, so
    every slave's trajectory is the same as when it runs alone. retunes, when
    given, holds one list of (t_s, f_dds_hz) events per slave.
    """
    retunes = list(retunes) if retunes is not None else [()] * len(slaves)
    if len(retunes) != len(slaves):
        raise RangeError(f"Got retune lists for {len(retunes)} slaves, expected {len(slaves)}.")
    locks = []
    for index, ((plant, config, seed), events) in enumerate(zip(slaves, retunes)):
        locks.append(OffsetLock(
            replace(plant, master_hz=master_hz), config,
            PiController(p_gain=config.p_gain, i_gain=config.i_gain),
            retunes=events, detector_seed=seed, name=f"slave{index}", strict=strict,
        ))
    if not locks:
        return []
    loop_rate = locks[0].config.loop_rate_hz
    if any(lock.config.loop_rate_hz != loop_rate for lock in locks):
        raise RangeError("All slaves sharing a master must run at the same loop rate.")
    for _ in range(int(round(duration_s * loop_rate))):
        for lock in locks:
            lock.step()
    return [lock.trajectory for lock in locks]
