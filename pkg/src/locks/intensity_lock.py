"""
Gated intensity lock
--------------------
A photodiode pick-off is digitized and a PI loop adjusts the amplitude of the
DDS driving the AOM. The loop runs only while its gate is on; when the gate
falls the amplitude is latched and held until the next gate-on window.
"""

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from src.analysis.metrics import step_response_metrics
from src.base.lock_base import LockBase, PiController, Trajectory, bisect_gain, pi_step
from src.base.plant import IntensityPlant, intensity_evolve
from src.base.sigcore import AMPLITUDE_FULL_SCALE, AdcSpec
from src.utils.error_handling import RangeError, SimulationError
from src.utils.logging_utils import get_logger

# Logging configuration
logger = get_logger("IntensityLock")


@dataclass(frozen=True)
class IntensityLockConfig:
    """Photodiode, ADC and loop-rate settings of the intensity lock."""
    pd_responsivity_v_per_w: float = 1.0e3
    adc: AdcSpec = field(default_factory=AdcSpec)
    loop_rate_hz: float = 100.0

    def __post_init__(self):
        if self.pd_responsivity_v_per_w <= 0 or self.loop_rate_hz <= 0:
            raise RangeError("Photodiode responsivity and loop rate must be positive.")


@dataclass(frozen=True)
class IntensityLockState:
    """
    Actuator state. While the gate is off, dds_amplitude equals held_amplitude.
    """
    setpoint_volts: float
    dds_amplitude: int = AMPLITUDE_FULL_SCALE // 2
    gate: bool = False
    held_amplitude: int = AMPLITUDE_FULL_SCALE // 2

    def __post_init__(self):
        for name in ("dds_amplitude", "held_amplitude"):
            value = getattr(self, name)
            if not 0 <= value <= AMPLITUDE_FULL_SCALE:
                raise RangeError(f"{name}={value} does not fit in 14 bits.")


@dataclass(frozen=True)
class GateSchedule:
    """Periodic on/off gate, starting with the on window unless start_on is False."""
    on_s: float
    off_s: float
    start_on: bool = True

    def __post_init__(self):
        if self.on_s < 0 or self.off_s < 0 or self.on_s + self.off_s <= 0:
            raise RangeError("Gate windows must be non-negative with a positive period.")

    @classmethod
    def from_durations(cls, on_s: float, off_s: float, start_on: bool = True) -> "GateSchedule":
        return cls(on_s=float(on_s), off_s=float(off_s), start_on=start_on)

    @classmethod
    def always_on(cls) -> "GateSchedule":
        return cls(on_s=1.0, off_s=0.0)

    @classmethod
    def always_off(cls) -> "GateSchedule":
        return cls(on_s=0.0, off_s=1.0)

    def is_on(self, t_s: float) -> bool:
        period = self.on_s + self.off_s
        phase = t_s % period
        if not self.start_on:
            phase = (phase + self.on_s) % period
        return phase < self.on_s


class IntensityTrajectory(Trajectory):
    """Per step: ADC volts, applied DDS amplitude, gate, saturation and delivered power."""
    COLUMNS = ("k", "t_s", "adc_v", "dds_amplitude", "gate", "saturated", "power_w")


def _clamp_amplitude(value: float) -> Tuple[int, bool]:
    code = int(np.floor(value + 0.5))
    if code < 0:
        return 0, True
    if code > AMPLITUDE_FULL_SCALE:
        return AMPLITUDE_FULL_SCALE, True
    return code, False


class IntensityLock(LockBase):
    """Sample-and-hold intensity stabilization of one beam."""

    def __init__(self, plant: IntensityPlant, state: IntensityLockState, schedule: GateSchedule,
                 pi: PiController, config: Optional[IntensityLockConfig] = None,
                 adc_seed: Optional[int] = None, name: str = "intensity", strict: bool = False):
        super().__init__(name=name, strict=strict)
        self.plant = plant
        self.state = state
        self.schedule = schedule
        self.config = config or IntensityLockConfig()
        self.pi = pi.reset(output_hz=float(state.dds_amplitude))
        self._adc_rng = np.random.default_rng(adc_seed)

    def run(self, duration_s: float) -> IntensityTrajectory:
        cfg = self.config
        dt = 1.0 / cfg.loop_rate_hz
        n_steps = int(round(duration_s * cfg.loop_rate_hz))
        trajectory = IntensityTrajectory()
        state, pi, plant = self.state, self.pi, self.plant
        saturation_events = 0

        for k in range(n_steps):
            t = k * dt
            gate = self.schedule.is_on(t)
            if state.gate and not gate:
                state = replace(state, held_amplitude=state.dds_amplitude)
                logger.debug(f"{self.name}: gate fell at t={t:.4g} s, holding amplitude {state.dds_amplitude}.")
            if not gate:
                state = replace(state, dds_amplitude=state.held_amplitude)
            state = replace(state, gate=gate)

            plant = intensity_evolve(plant, dt)
            power = plant.delivered_power(state.dds_amplitude)
            _, volts, _ = cfg.adc.quantize_array(np.asarray([cfg.pd_responsivity_v_per_w * power]), self._adc_rng)
            adc_v = float(volts[0])

            saturated = False
            applied = state.dds_amplitude
            if gate:
                try:
                    pi = pi_step(pi, state.setpoint_volts - adc_v)
                    self._check_controller(pi, k)
                except SimulationError as e:
                    self.state, self.pi, self.plant = state, pi, plant
                    return self._abort(trajectory, e)
                amplitude, saturated = _clamp_amplitude(pi.output_hz)
                if saturated:
                    saturation_events += 1
                    pi = replace(pi, output_hz=float(amplitude))
                state = replace(state, dds_amplitude=amplitude)

            trajectory.append(
                k=k, t_s=t, adc_v=adc_v, dds_amplitude=applied, gate=float(gate),
                saturated=float(saturated), power_w=power,
            )

        if saturation_events:
            logger.warning(f"{self.name}: amplitude saturated on {saturation_events} step(s).")
        self.state, self.pi, self.plant = state, pi, plant
        return trajectory


def intensity_lock_run(plant: IntensityPlant, state: IntensityLockState, schedule: GateSchedule,
                       pi: PiController, duration_s: float, config: Optional[IntensityLockConfig] = None,
                       adc_seed: Optional[int] = None, strict: bool = False) -> IntensityTrajectory:
    """Run the gated intensity lock; see IntensityLock."""
    return IntensityLock(plant, state, schedule, pi, config=config, adc_seed=adc_seed,
                         strict=strict).run(duration_s)


def calibrate_intensity_gains(plant: IntensityPlant, config: IntensityLockConfig, setpoint_volts: float,
                              target_slew_v_per_s: float, integral_ratio: float = 0.1,
                              step_fraction: float = 0.1, duration_s: float = 2.0) -> Tuple[float, float]:
    """
    Step-response gain calibration: bisect P (with I = integral_ratio * P) until a
    setpoint step of step_fraction is approached at the target PD slew.
    """
    start_amplitude = int(round(AMPLITUDE_FULL_SCALE * setpoint_volts * (1.0 - step_fraction)
                                / max(config.pd_responsivity_v_per_w * plant.delivered_power(AMPLITUDE_FULL_SCALE),
                                      1e-30)))
    start_amplitude = min(max(start_amplitude, 0), AMPLITUDE_FULL_SCALE)

    def measure(p_gain: float) -> float:
        trajectory = intensity_lock_run(
            replace(plant, rng=None, rng_seed=0),
            IntensityLockState(setpoint_volts=setpoint_volts, dds_amplitude=start_amplitude,
                               held_amplitude=start_amplitude),
            GateSchedule.always_on(),
            PiController(p_gain=p_gain, i_gain=integral_ratio * p_gain),
            duration_s,
            config=config,
            adc_seed=0,
        )
        metrics = step_response_metrics(trajectory.column("t_s"), trajectory.column("adc_v"), step_time_s=0.0)
        return metrics["slew_hz_per_s"]

    p_gain, slew = bisect_gain(measure, target_slew_v_per_s, lo=0.0, hi=100.0, rel_tol=0.02)
    logger.info(f"Intensity gains calibrated: P={p_gain:.4g}, I={integral_ratio * p_gain:.4g} "
                f"(PD slew {slew:.4g} V/s).")
    return p_gain, integral_ratio * p_gain
