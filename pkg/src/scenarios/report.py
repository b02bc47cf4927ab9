"""
Run Report
----------
Metric results with provenance, expectation checks and the JSON form of a
scenario run.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from src.utils.artifacts import FLOAT_FORMAT
from src.utils.error_handling import SimulationError
from src.utils.logging_utils import get_logger

# Logging configuration
logger = get_logger("RunReport")


@dataclass
class MetricResult:
    name: str
    value: Any
    module: str
    unit: str = ""


@dataclass
class ExpectationResult:
    metric: str
    value: Any
    min: Optional[float] = None
    max: Optional[float] = None
    passed: bool = False
    reason: str = ""


@dataclass
class RunReport:
    """
    Outcome of one scenario run.

    A metric name appears at most once; adding it again is an error.
    """
    scenario: str
    kind: str
    seed: int
    metrics: Dict[str, MetricResult] = field(default_factory=dict)
    expectations: List[ExpectationResult] = field(default_factory=list)
    artifacts: List[str] = field(default_factory=list)
    fault: Optional[str] = None
    wall_time_s: float = 0.0
    float_format: str = FLOAT_FORMAT

    def add_metric(self, name: str, value: Any, module: str, unit: str = "") -> None:
        if name in self.metrics:
            raise SimulationError(f"Metric '{name}' reported twice.")
        self.metrics[name] = MetricResult(name=name, value=value, module=module, unit=unit)

    def metric(self, name: str) -> Any:
        return self.metrics[name].value

    def evaluate(self, expectations: List[Dict[str, Any]]) -> List[ExpectationResult]:
        """Check each {metric, min?, max?} entry; a missing or non-numeric metric fails."""
        results = []
        for spec in expectations:
            name = spec["metric"]
            low, high = spec.get("min"), spec.get("max")
            result = ExpectationResult(metric=name, value=None, min=low, max=high)
            if name not in self.metrics:
                result.reason = "metric not produced"
            else:
                value = self.metrics[name].value
                result.value = value
                if isinstance(value, (bool, np.bool_, np.number)):
                    value = float(value)
                if not isinstance(value, (int, float)) or math.isnan(value):
                    result.reason = "metric is not numeric"
                elif low is not None and value < low:
                    result.reason = f"{value} < min {low}"
                elif high is not None and value > high:
                    result.reason = f"{value} > max {high}"
                else:
                    result.passed = True
            if not result.passed:
                logger.warning(f"Expectation on '{name}' failed: {result.reason}.")
            results.append(result)
        self.expectations = results
        return results

    @property
    def passed(self) -> bool:
        return self.fault is None and all(result.passed for result in self.expectations)

    def to_dict(self, include_timing: bool = True) -> Dict[str, Any]:
        payload = {
            "scenario": self.scenario,
            "kind": self.kind,
            "seed": self.seed,
            "metrics": {name: asdict(result) for name, result in sorted(self.metrics.items())},
            "expectations": [asdict(result) for result in self.expectations],
            "artifacts": sorted(self.artifacts),
            "fault": self.fault,
            "passed": self.passed,
        }
        if include_timing:
            payload["wall_time_s"] = self.wall_time_s
        return payload
