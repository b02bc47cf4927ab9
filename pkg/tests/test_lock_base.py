import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from src.base.lock_base import (
    LockBase,
    LockDetector,
    PiController,
    Trajectory,
    bisect_gain,
    pi_step,
)
from src.utils.error_handling import ControllerFault, RangeError, SimulationError


class _PairTrajectory(Trajectory):
    COLUMNS = ("k", "value")


class _FailingLock(LockBase):
    def run(self, duration_s):
        trajectory = _PairTrajectory()
        trajectory.append(k=0, value=1.0)
        return self._abort(trajectory, RangeError("out of range"))


class TestPiController:

    def test_incremental_law(self):
        """Test out(k+1) = out(k) + P*e + I*sum(e) over three samples."""
        ctrl = PiController(p_gain=2.0, i_gain=0.5, output_hz=10.0)
        for e in (1.0, -2.0, 0.5):
            ctrl = pi_step(ctrl, e)

        # corrections: 2.5, -4.5, 0.75
        assert ctrl.output_hz == pytest.approx(10.0 + 2.5 - 4.5 + 0.75)
        assert ctrl.integral_accumulator == pytest.approx(-0.5)
        assert ctrl.last_correction == pytest.approx(0.75)

    @given(st.lists(st.floats(min_value=-10.0, max_value=10.0, allow_nan=False), min_size=1, max_size=50))
    def test_accumulator_is_running_sum(self, errors):
        """Test that the integral accumulator equals the sum of consumed errors."""
        ctrl = PiController(p_gain=1.0, i_gain=0.1)
        for e in errors:
            ctrl = pi_step(ctrl, e)

        assert ctrl.integral_accumulator == pytest.approx(math.fsum(errors), abs=1e-9)

    def test_non_finite_error_faults(self):
        """Test that a NaN error freezes the output in the fault state."""
        ctrl = pi_step(PiController(p_gain=1.0, output_hz=5.0), 1.0)
        faulted = pi_step(ctrl, math.nan)

        assert faulted.faulted
        assert faulted.output_hz == ctrl.output_hz
        assert pi_step(faulted, 1.0) is faulted

    def test_reset(self):
        """Test that reset clears the accumulator and the fault."""
        ctrl = pi_step(pi_step(PiController(i_gain=1.0), 3.0), math.inf).reset(output_hz=7.0)

        assert ctrl.integral_accumulator == 0.0
        assert ctrl.output_hz == 7.0
        assert not ctrl.faulted

    def test_check_controller_raises(self):
        """Test that a faulted controller is reported as a ControllerFault."""
        with pytest.raises(ControllerFault):
            LockBase._check_controller(PiController(faulted=True), 3)


class TestLockDetector:

    def test_needs_dwell(self):
        """Test that lock is declared only after dwell consecutive samples."""
        detector = LockDetector(threshold=1.0, dwell=3)

        assert [detector.update(r) for r in (0.1, 0.2, 0.3, 0.4)] == [False, False, True, True]

    def test_excursion_resets(self):
        """Test that one large residual restarts the dwell count."""
        detector = LockDetector(threshold=1.0, dwell=2)
        flags = [detector.update(r) for r in (0.1, 0.1, 5.0, 0.1, 0.1)]

        assert flags == [False, True, False, False, True]


class TestTrajectory:

    def test_append_and_matrix(self):
        """Test column-oriented recording."""
        trajectory = _PairTrajectory()
        trajectory.append(k=0, value=1.5)
        trajectory.append(k=1, value=2.5)

        assert len(trajectory) == 2
        assert np.array_equal(trajectory.as_matrix(), np.array([[0.0, 1.5], [1.0, 2.5]]))

    def test_row_keys_must_match(self):
        """Test that rows with missing or extra columns are rejected."""
        with pytest.raises(SimulationError):
            _PairTrajectory().append(k=0)

    def test_empty_matrix_shape(self):
        """Test the shape of an empty record."""
        assert _PairTrajectory().as_matrix().shape == (0, 2)


class TestLockBase:

    def test_abort_keeps_partial_trajectory(self):
        """Test that a non-strict lock returns its partial record with a diagnostic."""
        trajectory = _FailingLock("faulty").run(1.0)

        assert trajectory.aborted
        assert len(trajectory) == 1
        assert "RangeError" in trajectory.diagnostic

    def test_strict_reraises(self):
        """Test that a strict lock re-raises its fault."""
        with pytest.raises(RangeError):
            _FailingLock("faulty", strict=True).run(1.0)


class TestBisectGain:

    def test_finds_target(self):
        """Test bisection on a linear response, including bracket expansion."""
        gain, value = bisect_gain(lambda g: 2.0 * g, target=10.0, lo=0.0, hi=1.0)

        assert value == pytest.approx(10.0, rel=0.01)
        assert gain == pytest.approx(5.0, rel=0.01)

    def test_unbracketable_target(self):
        """Test that a target the response never reaches is reported."""
        with pytest.raises(SimulationError, match="bracket"):
            bisect_gain(lambda g: 1.0, target=10.0, lo=0.0, hi=1.0)
