"""
Ion Trap Control API
--------------------
Public high-level API of the trapped-ion control-hardware simulator.

This module validates scenario files, dispatches them to the runner of their
kind and collects artifacts and run reports, hiding the lock, pipeline and
DAC models behind a few calls.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from src.scenarios.report import RunReport
from src.scenarios.runners import SCENARIO_RUNNERS
from src.utils.artifacts import FLOAT_FORMAT, save_json
from src.utils.config_loader import DEFAULT_BASE_CONFIG, SCENARIO_DIR, ConfigLoader, Scenario
from src.utils.error_handling import ConfigError, SimulationError
from src.utils.logging_utils import get_logger


# Logging configuration
logger = get_logger("API")

# Scenario kind -> runner registry
_SCENARIO_RUNNERS = dict(SCENARIO_RUNNERS)

EXIT_OK = 0
EXIT_EXPECTATION_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_FAULT = 3

PathLike = Union[str, Path]


# ---------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------
def validate_config(config_path: PathLike, seed: Optional[int] = None,
                    base_config_path: PathLike = DEFAULT_BASE_CONFIG) -> Scenario:
    """
    Validate a scenario file without running anything.

    Args:
        config_path (PathLike): Scenario YAML file.
        seed (int, optional): Replaces the seed given in the file.
        base_config_path (PathLike): Base defaults (config_base.yaml).

    Returns:
        Scenario: The validated scenario, merged over the defaults of its kind.

    Raises:
        ConfigError: With line-anchored issues if the file is invalid.

    Example:
        >>> scenario = validate_config("src/configs/scenarios/comb-step-calibration.yaml")
        >>> scenario.kind
        'comb_calibration'
    """
    logger.info(f"Validating scenario file: {config_path}")
    loader = ConfigLoader(base_config_path=str(base_config_path), scenario_config_path=str(config_path))
    return loader.load(seed_override=seed)


# ---------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------
def run_scenario(scenario: Scenario, out_dir: Optional[PathLike] = None) -> RunReport:
    """
    Run a validated scenario, write its artifacts and evaluate its expectations.

    Module faults do not escape: they are recorded in the report, and the
    artifacts written before the fault are kept.

    Args:
        scenario (Scenario): Output of validate_config.
        out_dir (PathLike, optional): Artifact directory. Defaults to the
            scenario's output_dir, then <output_root>/<scenario name>.

    Returns:
        RunReport: Metrics, expectation results and fault, also saved as report.json.

    Raises:
        ConfigError: If no runner exists for the scenario kind.

    Example:
        >>> report = run_scenario(validate_config("src/configs/scenarios/offset-allan.yaml"), "runs/allan")
        >>> report.metric("slave0_allan_slope")
    """
    runner = _SCENARIO_RUNNERS.get(scenario.kind)
    if not runner:
        raise ConfigError(
            f"Unsupported scenario kind: '{scenario.kind}'. Supported kinds: {list_scenario_kinds()}"
        )
    if out_dir is None:
        out_dir = scenario.output_dir or Path(scenario.settings.get("artifacts", {}).get("output_root", "runs")) \
            / scenario.name
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    report = RunReport(scenario=scenario.name, kind=scenario.kind, seed=scenario.seed,
                       float_format=scenario.settings.get("artifacts", {}).get("float_format", FLOAT_FORMAT))
    logger.info(f"Running scenario '{scenario.name}' ({scenario.kind}, seed={scenario.seed}) into {out_dir}")
    start = time.perf_counter()
    try:
        runner(scenario, out_dir, report)
    except SimulationError as e:
        logger.exception(f"Scenario '{scenario.name}' faulted.")
        report.fault = f"{type(e).__name__}: {e}"
    except Exception as e:
        logger.exception(f"Scenario '{scenario.name}' failed unexpectedly.")
        report.fault = f"{type(e).__name__}: {e}"
    report.wall_time_s = time.perf_counter() - start

    report.evaluate(scenario.expectations)
    save_json(report.to_dict(), out_dir / "report.json")
    logger.info(f"Scenario '{scenario.name}' finished in {report.wall_time_s:.2f} s: "
                f"{'passed' if report.passed else 'FAILED'}.")
    return report


def exit_status(report: RunReport) -> int:
    """Process status of one report: 3 on a fault, 1 on a failed expectation, else 0."""
    if report.fault is not None:
        return EXIT_RUNTIME_FAULT
    return EXIT_OK if report.passed else EXIT_EXPECTATION_FAILED


def _run_path(config_path: str, out_root: Optional[str], seed: Optional[int]) -> Tuple[int, Dict[str, Any]]:
    # Worker entry point; returns plain data so it crosses process boundaries
    try:
        scenario = validate_config(config_path, seed=seed)
    except ConfigError as e:
        return EXIT_CONFIG_ERROR, {"config": config_path, "error": str(e)}
    out_dir = Path(out_root) / scenario.name if out_root else None
    report = run_scenario(scenario, out_dir)
    return exit_status(report), report.to_dict()


def run_scenarios(config_paths: Sequence[PathLike], out_root: Optional[PathLike] = None,
                  seed: Optional[int] = None, jobs: int = 1) -> List[Tuple[int, Dict[str, Any]]]:
    """
    Validate and run several scenario files.

    Scenarios are independent and each draws from its own seed, so running
    them in a process pool (jobs > 1) gives the same artifacts as running
    them one after another.

    Returns:
        List[Tuple[int, Dict[str, Any]]]: (exit status, report dict) per file, in input order.
    """
    args = [(str(path), str(out_root) if out_root else None, seed) for path in config_paths]
    if jobs <= 1 or len(args) <= 1:
        return [_run_path(*arg) for arg in args]
    logger.info(f"Running {len(args)} scenario(s) on {jobs} worker process(es).")
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_run_path, *arg) for arg in args]
        return [future.result() for future in futures]


# ---------------------------------------------------------------------
# Discovery
# ---------------------------------------------------------------------
def list_scenario_kinds() -> List[str]:
    """
    List all supported scenario kinds.

    Example:
        >>> "offset_lock" in list_scenario_kinds()
        True
    """
    return list(_SCENARIO_RUNNERS.keys())


def list_scenarios(scenario_dir: PathLike = SCENARIO_DIR) -> List[str]:
    """
    List the built-in scenarios by name.

    Example:
        >>> list_scenarios()
        ['comb-averaging', 'comb-ramp', 'comb-step-calibration', ...]
    """
    return sorted(path.stem for path in Path(scenario_dir).glob("*.yaml"))


def builtin_scenario_path(name: str, scenario_dir: PathLike = SCENARIO_DIR) -> Path:
    """
    Path of a built-in scenario file.

    Raises:
        ConfigError: If no built-in scenario has that name.
    """
    path = Path(scenario_dir) / f"{name}.yaml"
    if not path.exists():
        raise ConfigError(f"Unknown built-in scenario '{name}'. Available: {list_scenarios(scenario_dir)}")
    return path
