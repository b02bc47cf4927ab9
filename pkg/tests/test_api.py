import json

import pytest
from unittest.mock import Mock, patch

import iontrapCtrl_api as api
from iontrapCtrl_api import (
    builtin_scenario_path,
    exit_status,
    list_scenario_kinds,
    list_scenarios,
    run_scenario,
    run_scenarios,
    validate_config,
)
from src.utils.error_handling import ConfigError, RangeError

FEED_FORWARD = """
    name: ff-small
    seed: 5
    feed_forward:
      n_sequences: 50
      n_steps: 5
    expectations:
      - {metric: max_abs_residual_hz, max: 1.0e-6}
      - {metric: within_bound, min: 1}
"""


@pytest.fixture
def feed_forward_scenario(write_scenario):
    return validate_config(write_scenario(FEED_FORWARD))


class TestDiscovery:

    def test_list_scenario_kinds(self):
        """Test listing supported scenario kinds."""
        kinds = list_scenario_kinds()

        assert isinstance(kinds, list)
        assert "offset_lock" in kinds
        assert "dac" in kinds

    def test_list_scenarios(self):
        """Test that the built-in scenarios are listed by name."""
        names = list_scenarios()

        assert "feed-forward" in names
        assert names == sorted(names)

    def test_builtin_scenarios_validate(self):
        """Test that every built-in scenario passes validation."""
        for name in list_scenarios():
            assert validate_config(builtin_scenario_path(name)).name == name

    def test_unknown_builtin(self):
        """Test that an unknown built-in name is a configuration error."""
        with pytest.raises(ConfigError, match="Unknown built-in scenario"):
            builtin_scenario_path("no-such-scenario")


class TestRunScenario:

    @patch('iontrapCtrl_api._SCENARIO_RUNNERS')
    def test_unsupported_kind(self, mock_registry, feed_forward_scenario, tmp_path):
        """Test running a scenario whose kind has no runner."""
        mock_registry.get.return_value = None

        with pytest.raises(ConfigError, match="Unsupported scenario kind"):
            run_scenario(feed_forward_scenario, tmp_path)

    def test_feed_forward_run(self, feed_forward_scenario, tmp_path):
        """Test a small feed-forward run, its artifacts and its report."""
        report = run_scenario(feed_forward_scenario, tmp_path)
        payload = json.loads((tmp_path / "report.json").read_text())

        assert report.passed
        assert exit_status(report) == api.EXIT_OK
        assert report.metric("max_abs_residual_hz") == 0.0
        assert payload["passed"] is True
        assert payload["artifacts"] == ["feed_forward_trace.csv"]
        assert len((tmp_path / "feed_forward_trace.csv").read_text().splitlines()) == 6

    def test_rerun_is_byte_identical(self, feed_forward_scenario, tmp_path):
        """Test that the same scenario and seed give identical artifacts."""
        run_scenario(feed_forward_scenario, tmp_path / "first")
        run_scenario(feed_forward_scenario, tmp_path / "second")

        first = (tmp_path / "first" / "feed_forward_trace.csv").read_bytes()
        assert first == (tmp_path / "second" / "feed_forward_trace.csv").read_bytes()

    def test_runner_fault_is_reported(self, feed_forward_scenario, tmp_path):
        """Test that a module fault is recorded and maps to exit status 3."""
        runner = Mock(side_effect=RangeError("AOM tone out of range"))

        with patch.dict('iontrapCtrl_api._SCENARIO_RUNNERS', {"feed_forward": runner}):
            report = run_scenario(feed_forward_scenario, tmp_path)

        runner.assert_called_once()
        assert report.fault == "RangeError: AOM tone out of range"
        assert exit_status(report) == api.EXIT_RUNTIME_FAULT
        assert (tmp_path / "report.json").exists()

    def test_failed_expectation(self, write_scenario, tmp_path):
        """Test that an unmet expectation maps to exit status 1."""
        scenario = validate_config(write_scenario(FEED_FORWARD.replace("min: 1}", "min: 2}")))
        report = run_scenario(scenario, tmp_path)

        assert report.fault is None
        assert not report.passed
        assert exit_status(report) == api.EXIT_EXPECTATION_FAILED


class TestRunScenarios:

    def test_config_error_status(self, write_scenario, tmp_path):
        """Test that an invalid file gives exit status 2 next to a valid run."""
        good = write_scenario(FEED_FORWARD, name="good.yaml")
        bad = write_scenario("name: bad\nfeed_forward: {}\n", name="bad.yaml")
        results = run_scenarios([good, bad], out_root=tmp_path / "runs")

        assert [code for code, _ in results] == [api.EXIT_OK, api.EXIT_CONFIG_ERROR]
        assert "seed required" in results[1][1]["error"]
        assert (tmp_path / "runs" / "ff-small" / "report.json").exists()

    def test_seed_override(self, write_scenario, tmp_path, mocker):
        """Test that the seed override reaches the runner and the report."""
        spy = mocker.spy(api, "run_scenario")
        code, payload = run_scenarios([write_scenario(FEED_FORWARD)], out_root=tmp_path, seed=11)[0]

        assert code == api.EXIT_OK
        assert payload["seed"] == 11
        assert spy.call_args.args[0].seed == 11


class TestArtifactSettings:

    def test_float_format_from_settings(self, feed_forward_scenario, tmp_path):
        """Test that artifacts.float_format sets the CSV number format."""
        feed_forward_scenario.settings["artifacts"]["float_format"] = "%.3f"
        report = run_scenario(feed_forward_scenario, tmp_path)
        rows = (tmp_path / "feed_forward_trace.csv").read_text().splitlines()[1:]

        assert report.float_format == "%.3f"
        assert all(len(field.split(".")[1]) == 3 for row in rows for field in row.split(","))

    def test_default_float_format(self, feed_forward_scenario):
        """Test that the base config carries the twelve-digit format."""
        assert feed_forward_scenario.settings["artifacts"]["float_format"] == "%.12g"
