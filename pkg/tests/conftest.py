import textwrap

import numpy as np
import pytest

from src.base.sigcore import AdcSpec
from src.locks.comb_lock import CombLockConfig


@pytest.fixture
def rng():
    """Provide a seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def desk_comb_config():
    """Comb lock configuration of the bench reference run (1.6 kHz ADC, N=16)."""
    return CombLockConfig(
        sample_rate_hz=1600.0,
        oversample_n=16,
        adc=AdcSpec(),
    )


@pytest.fixture
def write_scenario(tmp_path):
    """Write a scenario YAML document into a temporary directory and return its path."""
    def _write(text, name="scenario.yaml"):
        path = tmp_path / name
        path.write_text(textwrap.dedent(text).lstrip("\n"), encoding="utf-8")
        return path
    return _write
