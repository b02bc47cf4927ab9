"""
Ion Trap Control CLI
--------------------
Command-line front end: validate and run scenario files, list the built-in
scenarios, run a subsystem's reference scenario, or analyze a CSV column.

Exit codes: 0 success, 1 expectation failure, 2 config error, 3 runtime fault.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

import iontrapCtrl_api as api
from src.analysis.spectral import psd_estimate
from src.analysis.stability import FreqSeries, allan_deviation, allan_slope, octave_taus
from src.utils.artifacts import csv_column, save_csv
from src.utils.config_loader import load_base_settings
from src.utils.error_handling import ConfigError, SimulationError
from src.utils.logging_utils import get_logger, setup_logging

# Logging configuration
logger = get_logger("CLI")

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")

# Subsystem shortcut -> built-in scenario
_SHORTCUTS = {
    "comb-lock": "comb-step-calibration",
    "offset-lock": "offset-allan",
    "intensity-lock": "intensity-gated",
    "pid": "pid-channels",
    "dac": "dac-update-modes",
}


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", type=Path, default=None, help="Artifact directory root.")
    parser.add_argument("--seed", type=int, default=None, help="Override the scenario seed.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iontrap-ctrl", description="Trapped-ion control-hardware simulator.")
    parser.add_argument("--log-level", default=None, choices=LOG_LEVELS,
                        help="Overrides logging.level of the base config.")
    commands = parser.add_subparsers(dest="command", required=True)

    validate = commands.add_parser("validate", help="Validate a scenario file without running it.")
    validate.add_argument("--config", type=Path, required=True)
    validate.add_argument("--seed", type=int, default=None)

    run = commands.add_parser("run", help="Run one or more scenario files.")
    run.add_argument("--config", type=Path, nargs="+", required=True)
    run.add_argument("--jobs", type=int, default=1, help="Scenarios to run in parallel.")
    _add_run_options(run)

    commands.add_parser("list-scenarios", help="List the built-in scenarios.")

    for name, scenario in _SHORTCUTS.items():
        shortcut = commands.add_parser(name, help=f"Run a {name} scenario (default: built-in {scenario}).")
        shortcut.add_argument("--config", type=Path, default=None)
        _add_run_options(shortcut)

    analyze = commands.add_parser("analyze", help="Allan deviation or PSD of a CSV column.")
    analyze.add_argument("--input", type=Path, required=True)
    analyze.add_argument("--column", required=True)
    analyze.add_argument("--method", choices=["adev", "psd"], required=True)
    analyze.add_argument("--time-column", default="t_s")
    analyze.add_argument("--fs", type=float, default=None, help="Sample rate for psd (default: from time column).")
    analyze.add_argument("--segment-length", type=int, default=1024)
    analyze.add_argument("--out", type=Path, required=True, help="Output CSV.")
    return parser


# ---------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------
def _print_config_error(error: ConfigError) -> None:
    print(f"Configuration error: {error}", file=sys.stderr)


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        scenario = api.validate_config(args.config, seed=args.seed)
    except ConfigError as e:
        _print_config_error(e)
        return api.EXIT_CONFIG_ERROR
    print(f"{args.config}: OK ({scenario.kind}, seed={scenario.seed})")
    return api.EXIT_OK


def _summarize(results) -> int:
    status = api.EXIT_OK
    for code, payload in results:
        if "error" in payload:
            print(f"Configuration error: {payload['error']}", file=sys.stderr)
        else:
            verdict = "passed" if code == api.EXIT_OK else ("FAULT" if code == api.EXIT_RUNTIME_FAULT else "FAILED")
            print(f"{payload['scenario']}: {verdict}")
            for result in payload["expectations"]:
                if not result["passed"]:
                    print(f"  expectation {result['metric']}: {result['reason']}")
            if payload["fault"]:
                print(f"  fault: {payload['fault']}")
        status = max(status, code)
    return status


def cmd_run(args: argparse.Namespace) -> int:
    results = api.run_scenarios(args.config, out_root=args.out, seed=args.seed, jobs=args.jobs)
    return _summarize(results)


def cmd_shortcut(args: argparse.Namespace) -> int:
    try:
        path = args.config or api.builtin_scenario_path(_SHORTCUTS[args.command])
    except ConfigError as e:
        _print_config_error(e)
        return api.EXIT_CONFIG_ERROR
    return _summarize(api.run_scenarios([path], out_root=args.out, seed=args.seed))


def cmd_list(args: argparse.Namespace) -> int:
    for name in api.list_scenarios():
        print(name)
    return api.EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    try:
        values = csv_column(args.input, args.column)
        times = csv_column(args.input, args.time_column) if args.fs is None or args.method == "adev" else None
        if args.method == "adev":
            series = FreqSeries.from_samples(np.column_stack([times, values]))
            curve = allan_deviation(series, octave_taus(series))
            save_csv(np.column_stack([curve.taus_s, curve.adev, curve.stderr]), ("tau_s", "adev", "stderr"), args.out)
            print(json.dumps({"points": int(curve.taus_s.size), "slope": allan_slope(curve)}))
        else:
            fs = args.fs if args.fs is not None else 1.0 / float(np.mean(np.diff(times)))
            spectrum = psd_estimate(values, fs, args.segment_length)
            save_csv(np.column_stack([spectrum.freqs_hz, spectrum.psd]), ("freq_hz", "psd"), args.out)
            print(json.dumps({"bins": int(spectrum.freqs_hz.size), "resolution_hz": spectrum.resolution_hz}))
    except (SimulationError, OSError, ValueError) as e:
        logger.exception("Analysis failed.")
        print(f"Analysis failed: {e}", file=sys.stderr)
        return api.EXIT_RUNTIME_FAULT
    return api.EXIT_OK


_COMMANDS = {
    "validate": cmd_validate,
    "run": cmd_run,
    "list-scenarios": cmd_list,
    "analyze": cmd_analyze,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = load_base_settings().get("logging") or {}
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return api.EXIT_CONFIG_ERROR
    level = args.log_level or settings.get("level", "INFO")
    if level not in LOG_LEVELS:
        print(f"Configuration error: logging.level must be one of {', '.join(LOG_LEVELS)}, got '{level}'.",
              file=sys.stderr)
        return api.EXIT_CONFIG_ERROR
    setup_logging(level=getattr(logging, level), log_file=settings.get("log_file"))
    handler = _COMMANDS.get(args.command, cmd_shortcut)
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
