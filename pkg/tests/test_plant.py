import numpy as np
import pytest

from src.base.plant import (
    UNDETECTABLE,
    BeatNotePlant,
    IntensityPlant,
    RepRatePlant,
    beat_note,
    intensity_evolve,
    rep_rate_evolve,
)
from src.base.sigcore import AMPLITUDE_FULL_SCALE
from src.utils.error_handling import RangeError


class TestRepRatePlant:

    def test_linear_drift(self):
        """Test that a noise-free plant drifts linearly."""
        plant = RepRatePlant(f_rep_hz=76.0e6, drift_hz_per_s=5.0)
        for _ in range(10):
            plant = rep_rate_evolve(plant, 0.1)

        assert plant.f_rep_hz == pytest.approx(76.0e6 + 5.0, abs=1e-6)
        assert plant.last_delta_hz == pytest.approx(0.5)

    def test_seeded_noise_is_reproducible(self):
        """Test that equal seeds give equal frequency walks."""
        def walk(seed):
            plant = RepRatePlant(white_fm_rms_hz=1.0, rng_seed=seed)
            values = []
            for _ in range(20):
                plant = rep_rate_evolve(plant, 1e-3)
                values.append(plant.f_rep_hz)
            return values

        assert walk(3) == walk(3)
        assert walk(3) != walk(4)

    def test_step(self):
        """Test an abrupt frequency jump."""
        plant = RepRatePlant(f_rep_hz=76.0e6).step(100.0)

        assert plant.f_rep_hz == 76.0e6 + 100.0
        assert plant.last_delta_hz == 100.0

    def test_invalid_time_step(self):
        """Test that a non-positive time step is rejected."""
        with pytest.raises(RangeError):
            rep_rate_evolve(RepRatePlant(), 0.0)

    def test_invalid_frequency(self):
        """Test that a non-positive repetition rate is rejected."""
        with pytest.raises(RangeError):
            RepRatePlant(f_rep_hz=0.0)


class TestBeatNotePlant:

    def test_beat_inside_bandwidth(self):
        """Test the beat frequency of a detectable pair."""
        plant = BeatNotePlant(master_hz=0.0, slave_hz=-200.0e6)

        assert beat_note(plant) == 200.0e6

    def test_beat_outside_bandwidth(self):
        """Test that a beat beyond the photodiode bandwidth is undetectable."""
        plant = BeatNotePlant(master_hz=0.0, slave_hz=2.5e9, pd_bandwidth_hz=2.0e9)

        assert beat_note(plant) is UNDETECTABLE

    def test_noise_free_slave_draw(self):
        """Test that a noise-free slave draws zero."""
        assert BeatNotePlant().slave_noise_draw() == 0.0


class TestIntensityPlant:

    def test_delivered_power_scales_with_amplitude(self):
        """Test the actuator model at full and half scale."""
        plant = IntensityPlant(power_watts=1.0e-3)

        assert plant.delivered_power(AMPLITUDE_FULL_SCALE) == pytest.approx(1.0e-3)
        assert plant.delivered_power(0) == 0.0
        assert plant.delivered_power(2 * AMPLITUDE_FULL_SCALE) == pytest.approx(1.0e-3)

    def test_power_never_negative(self):
        """Test that the random walk is clamped at zero power."""
        plant = IntensityPlant(power_watts=1.0e-6, drift_w_per_s=-1.0)
        plant = intensity_evolve(plant, 1.0)

        assert plant.power_watts == 0.0

    def test_walk_scales_with_sqrt_dt(self):
        """Test that the random-walk step spread grows as sqrt(dt)."""
        def spread(dt):
            steps = []
            for seed in range(400):
                plant = IntensityPlant(power_watts=1.0, walk_rms_w_per_rt_s=1.0e-3, rng_seed=seed)
                steps.append(intensity_evolve(plant, dt).power_watts - 1.0)
            return float(np.std(steps))

        assert spread(4.0) / spread(1.0) == pytest.approx(2.0, rel=0.2)

    def test_invalid_power(self):
        """Test that negative power is rejected."""
        with pytest.raises(RangeError):
            IntensityPlant(power_watts=-1.0)
