import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from src.hardware.pid_pipeline import (
    NUM_CHANNELS,
    ChannelState,
    PidChannelConfig,
    PidPipeline,
    PipelineState,
    RouteLimiter,
    oversample_accumulate,
    output_process,
    pid_filter_step,
    pipeline_integral_gain,
    pipeline_run,
)
from src.base.lock_base import PiController
from src.base.plant import RepRatePlant
from src.locks.comb_lock import comb_lock_run
from src.scenarios.runners import comb_lock_equivalence, pipeline_matches_pi
from src.utils.error_handling import AnalysisError, ChannelError


class TestStages:

    def test_oversample_emits_every_ratio_samples(self):
        """Test that the running average is emitted once per `ratio` samples."""
        state = PipelineState()
        outputs = [oversample_accumulate(state, 2, float(v), ratio=4) for v in range(8)]

        assert outputs[:3] == [None, None, None]
        assert outputs[3] == pytest.approx(1.5)
        assert outputs[7] == pytest.approx(5.5)

    def test_channel_out_of_range(self):
        """Test that channel 8 does not exist."""
        with pytest.raises(ChannelError):
            oversample_accumulate(PipelineState(), NUM_CHANNELS, 0.0)

    def test_pid_terms(self):
        """Test the proportional, integral and derivative terms."""
        config = PidChannelConfig(p_gain=2.0, i_gain=10.0, d_gain=0.5)
        chan = ChannelState()
        first = pid_filter_step(chan, config, 1.0, 0.1)
        second = pid_filter_step(chan, config, 3.0, 0.1)

        assert first == pytest.approx(2.0 + 10.0 * 0.1)
        assert second == pytest.approx(6.0 + 10.0 * 0.4 + 0.5 * 20.0)

    def test_anti_windup(self):
        """Test that the integral term is limited to twice the output span."""
        config = PidChannelConfig(i_gain=1.0, bounds=(-1.0, 1.0))
        chan = ChannelState()
        for _ in range(100):
            u = pid_filter_step(chan, config, 1.0, 1.0)

        assert u == pytest.approx(4.0)

    def test_non_finite_error_faults(self):
        """Test that a NaN error faults the channel."""
        chan = ChannelState()

        assert pid_filter_step(chan, PidChannelConfig(p_gain=1.0), math.nan, 1.0) is None
        assert chan.faulted
        assert pid_filter_step(chan, PidChannelConfig(p_gain=1.0), 1.0, 1.0) is None

    @given(st.floats(min_value=-1.0e6, max_value=1.0e6, allow_nan=False),
           st.floats(min_value=-10.0, max_value=10.0, allow_nan=False),
           st.floats(min_value=-10.0, max_value=10.0, allow_nan=False))
    def test_output_within_bounds(self, u, a, b):
        """Test that processed outputs always respect the channel bounds."""
        config = PidChannelConfig(linear_transform=(a, b), bounds=(-2.0, 3.0))

        assert -2.0 <= output_process(u, config) <= 3.0

    def test_accumulate_mode(self):
        """Test that accumulate mode adds a*u to the previous output."""
        config = PidChannelConfig(linear_transform=(2.0, 5.0), bounds=(-100.0, 100.0), accumulate=True)

        assert output_process(1.0, config) == 7.0
        assert output_process(1.0, config, last_output=7.0) == 9.0

    @pytest.mark.parametrize("kwargs", [
        {"output_route": "analog"},
        {"oversample_ratio": 0},
        {"bounds": (1.0, -1.0)},
    ])
    def test_invalid_config(self, kwargs):
        """Test route, oversample and bounds checks."""
        with pytest.raises(ChannelError):
            PidChannelConfig(**kwargs)


class TestRouteLimiter:

    def test_coalesces_early_updates(self):
        """Test that updates inside the minimum interval are coalesced, last value winning."""
        limiter = RouteLimiter(rate_cap_hz=10.0)
        limiter.offer(0.0, 1.0)
        limiter.offer(0.05, 2.0)
        limiter.offer(0.08, 3.0)
        limiter.flush()

        assert limiter.emitted == [(0.0, 1.0), pytest.approx((0.1, 3.0))]
        assert limiter.dropped == 1


class TestPidPipeline:

    def test_rate_cap_respected(self):
        """Test that a DC DAC route never updates faster than 66 kHz."""
        config = PidChannelConfig(p_gain=1.0)
        log = pipeline_run([config], [lambda t, frame: math.sin(frame)], duration_s=0.001)[0]
        times = np.array([t for t, _ in log.routed])

        assert len(log.output_value) == 200
        assert np.all(np.diff(times) >= 1.0 / 66.0e3 * (1.0 - 1e-9))
        assert log.dropped_updates > 0

    def test_oversampled_channel_is_not_capped(self):
        """Test that a 4x oversampled DDS route fits within its cap without drops."""
        config = PidChannelConfig(p_gain=1.0, oversample_ratio=4, output_route="dds_frequency")
        log = pipeline_run([config], [np.ones(200)], duration_s=0.001)[0]

        assert len(log.output_value) == 50
        assert log.dropped_updates == 0

    def test_channels_are_isolated(self):
        """Test that a faulting channel leaves its neighbours untouched."""
        good = PidChannelConfig(p_gain=1.0, i_gain=100.0)
        sources = [np.full(100, 0.5), np.full(100, np.nan), np.full(100, 0.5)]
        logs = pipeline_run([good, good, good], sources, duration_s=0.0005)
        alone = pipeline_run([good], [np.full(100, 0.5)], duration_s=0.0005)[0]

        assert logs[1].diagnostic is not None
        assert logs[1].output_value == []
        assert logs[0].output_value == alone.output_value
        assert logs[2].output_value == alone.output_value

    def test_short_source_faults_channel(self):
        """Test that a source running out of samples faults only its channel."""
        logs = pipeline_run([PidChannelConfig(p_gain=1.0)], [np.zeros(10)], duration_s=0.0001)

        assert len(logs[0].output_value) == 10
        assert "frame 10" in logs[0].diagnostic

    def test_too_many_channels(self):
        """Test that a ninth channel is rejected."""
        with pytest.raises(ChannelError):
            PidPipeline([PidChannelConfig()] * (NUM_CHANNELS + 1))

    def test_service_order_within_frame(self):
        """Test that channels are serviced in ascending order inside one frame."""
        config = PidChannelConfig(p_gain=1.0)
        logs = pipeline_run([config, config], [np.zeros(1), np.zeros(1)], duration_s=1.0 / 200.0e3)

        assert logs[0].t_s[0] < logs[1].t_s[0] < 1.0 / 200.0e3


@pytest.fixture
def comb_step_trajectory(desk_comb_config):
    """Bench comb lock (1.6 kHz ADC, N=16) answering a 100 Hz repetition-rate step."""
    return comb_lock_run(
        RepRatePlant(f_rep_hz=76.0e6), desk_comb_config,
        PiController(p_gain=1.0, i_gain=0.0055, output_hz=76.0e6), duration_s=3.0,
        steps=[(0.5, 100.0)], adc_seed=0, strict=True,
    )


class TestCombLockEquivalence:

    def test_integral_gain_mapping(self):
        """Test that the incremental I gain is rescaled by frame rate over oversample ratio."""
        assert pipeline_integral_gain(0.0055, 1600.0, 16) == pytest.approx(0.55)
        assert pipeline_integral_gain(0.0055, 1.0) == pytest.approx(0.0055)

    @pytest.mark.parametrize("frame_rate,ratio", [(0.0, 16), (1600.0, 0)])
    def test_integral_gain_mapping_invalid(self, frame_rate, ratio):
        """Test that a zero frame rate or oversample ratio is rejected."""
        with pytest.raises(ChannelError):
            pipeline_integral_gain(0.0055, frame_rate, ratio)

    def test_oversampled_channel_tracks_comb_lock(self, comb_step_trajectory):
        """Test that an N=16 channel at 1600 frames/s reproduces the comb lock's f_0 through a step."""
        f0 = comb_step_trajectory.column("f0_hz")
        raw = np.repeat(comb_step_trajectory.column("error_v"), 16)

        assert np.ptp(f0) > 50.0
        assert pipeline_matches_pi(raw, f0, 1.0, 0.0055, 16, 1600.0, start_hz=76.0e6) <= 1e-9

    def test_unscaled_integral_gain_diverges(self, comb_step_trajectory):
        """Test that the raw incremental I gain on the channel does not reproduce the lock."""
        f0 = comb_step_trajectory.column("f0_hz")
        raw = np.repeat(comb_step_trajectory.column("error_v"), 16)
        # Pre-divide so the channel ends up with i_gain = 0.0055
        unscaled = 0.0055 * 16 / 1600.0

        assert pipeline_matches_pi(raw, f0, 1.0, unscaled, 16, 1600.0, start_hz=76.0e6) > 1e-9

    def test_comb_lock_equivalence(self, desk_comb_config):
        """Test the end-to-end comparison used by the pid-channels scenario."""
        error = comb_lock_equivalence(desk_comb_config, 1.0, 0.0055, duration_s=3.0, step_hz=100.0,
                                      step_time_s=0.5, adc_seed=0)

        assert error <= 1e-9

    def test_length_mismatch(self):
        """Test that a raw trace not a multiple of the reference length is rejected."""
        with pytest.raises(AnalysisError):
            pipeline_matches_pi(np.zeros(30), np.full(2, 76.0e6), 1.0, 0.0055, 16, 1600.0, start_hz=76.0e6)
