import json
import logging
from unittest.mock import patch

import numpy as np
import pytest

import iontrapCtrl_cli as cli
from src.utils.artifacts import open_csv, save_csv


@pytest.fixture(autouse=True)
def in_tmp_dir(tmp_path, monkeypatch):
    """Keep the CLI log file inside the test directory."""
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def beat_csv(tmp_path, rng):
    """A 1 s sampled record of white frequency noise."""
    t = np.arange(512) * 1.0
    return save_csv(np.column_stack([t, rng.normal(0.0, 1.0, t.size)]), ("t_s", "beat_error_hz"),
                    tmp_path / "beat.csv")


class TestValidate:

    def test_valid(self, write_scenario, capsys):
        """Test that a valid scenario returns 0."""
        path = write_scenario("name: ok\nseed: 1\ncoherence: {}\n")

        assert cli.main(["validate", "--config", str(path)]) == 0
        assert "OK (coherence, seed=1)" in capsys.readouterr().out

    def test_invalid(self, write_scenario, capsys):
        """Test that an invalid scenario returns 2 and names the problem."""
        path = write_scenario("name: bad\ncoherence: {}\n")

        assert cli.main(["validate", "--config", str(path)]) == 2
        assert "seed required" in capsys.readouterr().err


class TestRun:

    def test_run_and_list(self, write_scenario, tmp_path, capsys):
        """Test running a small scenario and listing the built-ins."""
        path = write_scenario("""
            name: ff-cli
            seed: 2
            feed_forward: {n_sequences: 20, n_steps: 3}
        """)

        assert cli.main(["run", "--config", str(path), "--out", str(tmp_path / "runs")]) == 0
        assert (tmp_path / "runs" / "ff-cli" / "feed_forward_trace.csv").exists()

        assert cli.main(["list-scenarios"]) == 0
        assert "feed-forward" in capsys.readouterr().out.split()

    def test_shortcut_with_config(self, write_scenario, tmp_path):
        """Test that a subsystem shortcut runs the given file instead of its built-in."""
        path = write_scenario("""
            name: pid-small
            seed: 3
            duration_s: 0.0005
            pid_pipeline:
              channels:
                - {p_gain: 1.0, source: {type: constant, offset_v: 0.1}}
              comb_equivalence: {enabled: false}
        """)

        assert cli.main(["pid", "--config", str(path), "--out", str(tmp_path / "runs")]) == 0
        assert (tmp_path / "runs" / "pid-small" / "report.json").exists()


class TestAnalyze:

    def test_adev(self, beat_csv, tmp_path, capsys):
        """Test the Allan deviation of a CSV column."""
        out = tmp_path / "adev.csv"

        assert cli.main(["analyze", "--input", str(beat_csv), "--column", "beat_error_hz",
                         "--method", "adev", "--out", str(out)]) == 0
        columns, data = open_csv(out)
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])

        assert columns == ["tau_s", "adev", "stderr"]
        assert data.shape[0] == summary["points"]
        assert summary["slope"] == pytest.approx(-0.5, abs=0.25)

    def test_psd(self, beat_csv, tmp_path):
        """Test the spectral density of a CSV column with the rate taken from the time column."""
        out = tmp_path / "psd.csv"

        assert cli.main(["analyze", "--input", str(beat_csv), "--column", "beat_error_hz",
                         "--method", "psd", "--segment-length", "128", "--out", str(out)]) == 0
        columns, data = open_csv(out)

        assert columns == ["freq_hz", "psd"]
        assert data.shape[0] == 65

    def test_missing_column(self, beat_csv, tmp_path, capsys):
        """Test that an unknown column returns 3."""
        assert cli.main(["analyze", "--input", str(beat_csv), "--column", "power_w",
                         "--method", "adev", "--out", str(tmp_path / "adev.csv")]) == 3
        assert "Column 'power_w'" in capsys.readouterr().err


class TestLoggingSettings:

    @patch('iontrapCtrl_cli.setup_logging')
    def test_base_config_logging(self, mock_setup):
        """Test that the level and log file come from the base config."""
        assert cli.main(["list-scenarios"]) == 0

        mock_setup.assert_called_once_with(level=logging.INFO, log_file="logs/iontrap_ctrl.log")

    @patch('iontrapCtrl_cli.setup_logging')
    @patch('iontrapCtrl_cli.load_base_settings')
    def test_log_level_flag_overrides(self, mock_settings, mock_setup):
        """Test that --log-level wins over logging.level while the log file is kept."""
        mock_settings.return_value = {"logging": {"level": "WARNING", "log_file": "elsewhere/ctrl.log"}}

        assert cli.main(["--log-level", "DEBUG", "list-scenarios"]) == 0
        mock_setup.assert_called_once_with(level=logging.DEBUG, log_file="elsewhere/ctrl.log")

    @patch('iontrapCtrl_cli.setup_logging')
    @patch('iontrapCtrl_cli.load_base_settings')
    def test_invalid_level(self, mock_settings, mock_setup, capsys):
        """Test that an unknown logging.level is a configuration error."""
        mock_settings.return_value = {"logging": {"level": "CHATTY"}}

        assert cli.main(["list-scenarios"]) == 2
        assert "logging.level" in capsys.readouterr().err
        mock_setup.assert_not_called()
