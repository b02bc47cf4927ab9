import numpy as np
import pytest

from src.base.lock_base import PiController
from src.base.plant import IntensityPlant
from src.base.sigcore import AMPLITUDE_FULL_SCALE
from src.locks.intensity_lock import (
    GateSchedule,
    IntensityLockConfig,
    IntensityLockState,
    calibrate_intensity_gains,
    intensity_lock_run,
)
from src.utils.error_handling import RangeError


@pytest.fixture
def drifting_plant():
    """1 mW beam losing 50 uW/s."""
    return IntensityPlant(power_watts=1.0e-3, drift_w_per_s=-5.0e-5)


@pytest.fixture
def half_scale_state():
    return IntensityLockState(setpoint_volts=0.4, dds_amplitude=8191, held_amplitude=8191)


class TestGateSchedule:

    def test_periodic_windows(self):
        """Test on/off windows of a 0.5 s / 0.5 s gate."""
        schedule = GateSchedule.from_durations(0.5, 0.5)

        assert schedule.is_on(0.0)
        assert schedule.is_on(0.25)
        assert not schedule.is_on(0.75)
        assert schedule.is_on(1.25)

    def test_start_off(self):
        """Test a gate that starts in its off window."""
        schedule = GateSchedule(on_s=0.5, off_s=0.5, start_on=False)

        assert not schedule.is_on(0.25)
        assert schedule.is_on(0.75)

    def test_always(self):
        """Test the constant gates."""
        assert GateSchedule.always_on().is_on(123.4)
        assert not GateSchedule.always_off().is_on(123.4)

    def test_invalid(self):
        """Test that a zero-length period is rejected."""
        with pytest.raises(RangeError):
            GateSchedule(on_s=0.0, off_s=0.0)


class TestIntensityLock:

    def test_lock_off_drifts_with_amplitude_constant(self, drifting_plant, half_scale_state):
        """Test that with the gate off the amplitude never moves and the PD voltage only falls."""
        trajectory = intensity_lock_run(drifting_plant, half_scale_state, GateSchedule.always_off(),
                                        PiController(p_gain=5000.0, i_gain=500.0), duration_s=1.0)

        assert np.all(trajectory.column("dds_amplitude") == 8191)
        assert np.all(np.diff(trajectory.column("adc_v")) <= 0.0)
        assert trajectory.column("adc_v")[-1] < trajectory.column("adc_v")[0]

    def test_gated_lock_reaches_setpoint_and_holds(self, drifting_plant, half_scale_state):
        """Test convergence within a gate window and bit-identical hold while the gate is off."""
        trajectory = intensity_lock_run(drifting_plant, half_scale_state, GateSchedule.from_durations(0.5, 0.5),
                                        PiController(p_gain=5000.0, i_gain=500.0), duration_s=2.0)
        gate = trajectory.column("gate") > 0
        amplitude = trajectory.column("dds_amplitude")
        adc_v = trajectory.column("adc_v")

        assert len(trajectory) == 200
        assert abs(adc_v[49] - 0.4) < 0.005
        held = ~gate[1:] & ~gate[:-1]
        assert held.any()
        assert np.all(amplitude[1:][held] == amplitude[:-1][held])

    def test_unreachable_setpoint_saturates(self, half_scale_state):
        """Test that the amplitude clamps at full scale and the saturation is flagged."""
        state = IntensityLockState(setpoint_volts=50.0, dds_amplitude=8191, held_amplitude=8191)
        trajectory = intensity_lock_run(IntensityPlant(power_watts=1.0e-3), state, GateSchedule.always_on(),
                                        PiController(p_gain=5000.0, i_gain=500.0), duration_s=0.2)

        assert trajectory.column("dds_amplitude").max() == AMPLITUDE_FULL_SCALE
        assert trajectory.column("saturated").sum() > 0
        assert not trajectory.aborted

    def test_invalid_state(self):
        """Test that an amplitude beyond 14 bits is rejected."""
        with pytest.raises(RangeError):
            IntensityLockState(setpoint_volts=0.4, dds_amplitude=AMPLITUDE_FULL_SCALE + 1)

    def test_invalid_config(self):
        """Test that a zero loop rate is rejected."""
        with pytest.raises(RangeError):
            IntensityLockConfig(loop_rate_hz=0.0)


class TestIntensityCalibration:

    def test_calibrated_gains_keep_ratio(self):
        """Test that calibration returns I = ratio * P with a positive P."""
        p_gain, i_gain = calibrate_intensity_gains(IntensityPlant(power_watts=1.0e-3), IntensityLockConfig(),
                                                   setpoint_volts=0.4, target_slew_v_per_s=1.0,
                                                   integral_ratio=0.1)

        assert p_gain > 0.0
        assert i_gain == pytest.approx(0.1 * p_gain)
