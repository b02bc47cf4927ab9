import numpy as np
import pytest

from src.base.lock_base import PiController
from src.base.plant import RepRatePlant
from src.locks.comb_lock import (
    CombLockConfig,
    averaging_study,
    comb_lock_run,
    feed_forward,
    feed_forward_study,
    initial_f2,
    measure_step_slew,
    predicted_slew,
    resonance_residual,
)
from src.utils.error_handling import FeedForwardRangeError, RangeError


class TestResonance:

    def test_initial_f2_is_resonant(self):
        """Test that the solved AOM tone zeroes the resonance residual."""
        config = CombLockConfig()
        f2 = initial_f2(76.0e6, config)

        assert f2 == pytest.approx(216.0e6)
        assert resonance_residual(76.0e6, config.f1_hz, f2, config) == pytest.approx(0.0, abs=1e-6)

    def test_initial_f2_outside_aom_range(self):
        """Test that an unreachable resonance is reported."""
        with pytest.raises(FeedForwardRangeError):
            initial_f2(75.0e6, CombLockConfig())

    def test_negative_sign(self):
        """Test the resonance algebra with the lower sideband."""
        config = CombLockConfig(sign=-1, f1_hz=200.0e6)
        f2 = initial_f2(76.0e6, config)

        assert f2 == pytest.approx(184.0e6)
        assert resonance_residual(76.0e6, config.f1_hz, f2, config) == pytest.approx(0.0, abs=1e-6)

    @pytest.mark.parametrize("kwargs", [
        {"sign": 2},
        {"n_harmonic": 0},
        {"sample_rate_hz": 2.0e6},
        {"aom_min_hz": 3.0e8},
    ])
    def test_invalid_config(self, kwargs):
        """Test configuration checks."""
        with pytest.raises(RangeError):
            CombLockConfig(**kwargs)

    def test_loop_rate(self, desk_comb_config):
        """Test that averaging N samples divides the loop rate by N."""
        assert desk_comb_config.loop_rate_hz == 100.0


class TestFeedForward:

    def test_scalar(self):
        """Test f2 + sign*n*delta on one value."""
        assert feed_forward(200.0e6, 166, 1.0) == 200.0e6 + 166.0
        assert feed_forward(200.0e6, 166, 1.0, sign=-1) == 200.0e6 - 166.0

    def test_array(self):
        """Test the update elementwise."""
        result = feed_forward(np.array([200.0e6, 210.0e6]), 10, np.array([1.0, -2.0]))

        assert np.array_equal(result, np.array([200.0e6 + 10.0, 210.0e6 - 20.0]))

    def test_leaves_aom_range(self):
        """Test that an update pushing f2 out of the AOM range is rejected."""
        with pytest.raises(FeedForwardRangeError, match="AOM range"):
            feed_forward(249.9e6, 166, 1.0e3, aom_range=(150.0e6, 250.0e6))

    def test_non_finite(self):
        """Test that non-finite inputs are rejected."""
        with pytest.raises(FeedForwardRangeError):
            feed_forward(200.0e6, 166, np.nan)

    def test_study_perfect_tracking_is_exact(self):
        """Test that a perfect tracker leaves zero resonance residual."""
        study = feed_forward_study(CombLockConfig(), n_sequences=200, n_steps=20, seed=1)

        assert study.max_abs_residual_hz == 0.0
        assert study.within_bound
        assert study.residual_trace_hz.shape == (20,)

    def test_study_tracking_error_stays_within_bound(self):
        """Test |residual| <= n*|f0 - f_rep| when f0 tracks with an error."""
        study = feed_forward_study(CombLockConfig(), n_sequences=200, n_steps=20,
                                   tracking_error_rms_hz=0.3, seed=2)

        assert study.max_abs_residual_hz > 0.0
        assert study.within_bound

    def test_study_is_seeded(self):
        """Test that equal seeds give equal traces."""
        first = feed_forward_study(CombLockConfig(), n_sequences=10, n_steps=5, tracking_error_rms_hz=0.1, seed=7)
        second = feed_forward_study(CombLockConfig(), n_sequences=10, n_steps=5, tracking_error_rms_hz=0.1, seed=7)

        assert np.array_equal(first.residual_trace_hz, second.residual_trace_hz)


class TestCombLockRun:

    def test_holds_lock_on_quiet_plant(self, desk_comb_config):
        """Test that a lock started on resonance stays there and declares lock after the dwell."""
        trajectory = comb_lock_run(
            RepRatePlant(f_rep_hz=76.0e6), desk_comb_config,
            PiController(p_gain=1.0, i_gain=0.0055, output_hz=76.0e6), duration_s=2.0, adc_seed=0,
        )
        locked = trajectory.column("locked")

        assert len(trajectory) == 200
        assert not trajectory.aborted
        assert np.all(trajectory.column("residual_hz") == 0.0)
        assert locked[desk_comb_config.lock_dwell - 2] == 0.0
        assert np.all(locked[desk_comb_config.lock_dwell - 1:] == 1.0)

    def test_feed_forward_fault_aborts(self):
        """Test that leaving the AOM range stops a non-strict run with a diagnostic."""
        config = CombLockConfig(sample_rate_hz=1600.0, aom_min_hz=215.999e6, aom_max_hz=216.001e6)
        trajectory = comb_lock_run(
            RepRatePlant(f_rep_hz=76.0e6), config,
            PiController(p_gain=1.0, i_gain=0.0055, output_hz=76.0e6), duration_s=1.0,
            steps=[(0.05, 100.0)], adc_seed=0,
        )

        assert trajectory.aborted
        assert 0 < len(trajectory) < 100
        assert "FeedForwardRangeError" in trajectory.diagnostic

    def test_feed_forward_fault_strict(self):
        """Test that a strict run re-raises the feed-forward fault."""
        config = CombLockConfig(sample_rate_hz=1600.0, aom_min_hz=215.999e6, aom_max_hz=216.001e6)
        with pytest.raises(FeedForwardRangeError):
            comb_lock_run(
                RepRatePlant(f_rep_hz=76.0e6), config,
                PiController(p_gain=1.0, i_gain=0.0055, output_hz=76.0e6), duration_s=1.0,
                steps=[(0.05, 100.0)], adc_seed=0, strict=True,
            )


class TestSlew:

    def test_predicted_slew_of_desk_gains(self):
        """Test that P=1, I=5.5e-3 slews a 100 Hz step at about 50 Hz/s."""
        slew = predicted_slew(1.0, 0.0055, 0.2, 100.0, 100.0)

        assert slew == pytest.approx(51.0, rel=0.02)

    def test_predicted_slew_grows_with_integral_gain(self):
        """Test that a larger I gives a faster slew."""
        assert predicted_slew(1.0, 0.011, 0.2, 100.0, 100.0) > predicted_slew(1.0, 0.0055, 0.2, 100.0, 100.0)

    def test_predicted_slew_invalid(self):
        """Test that a zero saturated error is rejected."""
        with pytest.raises(RangeError):
            predicted_slew(1.0, 0.0055, 0.0, 100.0, 100.0)

    def test_measured_slew_matches_prediction(self, desk_comb_config):
        """Test that the simulated step response slews as the PI law predicts."""
        measured = measure_step_slew(desk_comb_config, 1.0, 0.0055, step_hz=100.0)
        predicted = predicted_slew(1.0, 0.0055, desk_comb_config.mixer_limit_v, 100.0,
                                   desk_comb_config.loop_rate_hz)

        assert measured == pytest.approx(predicted, rel=0.05)


class TestAveraging:

    def test_variance_scales_inversely_with_n(self):
        """Test that averaging N samples divides the error variance by about N."""
        variances = averaging_study(CombLockConfig(), n_values=(1, 4), offsets_hz=(0.0, 0.05),
                                    averaged_samples_per_segment=400, noise_rms_v=0.35, seed=3)

        assert variances[1] == pytest.approx(0.35 ** 2, rel=0.15)
        assert 4.0 * variances[4] / variances[1] == pytest.approx(1.0, abs=0.25)
