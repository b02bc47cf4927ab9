"""
Abstract base class for lock types
----------------------------------
Shared feedback machinery: the incremental PI controller, lock detection,
trajectory recording, fault handling and gain calibration by bisection.
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from src.utils.error_handling import ControllerFault, SimulationError
from src.utils.logging_utils import get_logger

# Logging configuration
logger = get_logger("LockBase")


# -------------------------------
# PI controller
# -------------------------------
@dataclass(frozen=True)
class PiController:
    """
    Incremental PI law: out(k+1) = out(k) + P*e_k + I*sum(e_1..e_k).

    integral_accumulator is the exact running sum of consumed errors.
    """
    p_gain: float = 1.0
    i_gain: float = 0.0
    integral_accumulator: float = 0.0
    output_hz: float = 0.0
    last_correction: float = 0.0
    faulted: bool = False

    def reset(self, output_hz: Optional[float] = None) -> "PiController":
        return replace(
            self,
            integral_accumulator=0.0,
            output_hz=self.output_hz if output_hz is None else output_hz,
            last_correction=0.0,
            faulted=False,
        )


def pi_step(ctrl: PiController, e_k: float) -> PiController:
    """
    Consume one error sample.

    A non-finite error puts the controller in its fault state with the output frozen.
    """
    if ctrl.faulted:
        return ctrl
    if not math.isfinite(e_k):
        logger.warning(f"PI controller received non-finite error {e_k}; entering fault state.")
        return replace(ctrl, faulted=True, last_correction=0.0)
    accumulator = ctrl.integral_accumulator + e_k
    correction = ctrl.p_gain * e_k + ctrl.i_gain * accumulator
    return replace(
        ctrl,
        integral_accumulator=accumulator,
        output_hz=ctrl.output_hz + correction,
        last_correction=correction,
    )


# -------------------------------
# Lock detection
# -------------------------------
class LockDetector:
    """Declares lock once |residual| < threshold for `dwell` consecutive samples."""

    def __init__(self, threshold: float, dwell: int):
        self.threshold = threshold
        self.dwell = max(int(dwell), 1)
        self._count = 0

    def update(self, residual: float) -> bool:
        if abs(residual) < self.threshold:
            self._count += 1
        else:
            self._count = 0
        return self._count >= self.dwell


# -------------------------------
# Trajectory recording
# -------------------------------
class Trajectory:
    """Column-oriented per-step record; subclasses fix COLUMNS."""

    COLUMNS: Tuple[str, ...] = ()

    def __init__(self):
        self._data: Dict[str, List[float]] = {name: [] for name in self.COLUMNS}
        self.aborted = False
        self.diagnostic: Optional[str] = None

    def append(self, **row: float) -> None:
        if set(row) != set(self.COLUMNS):
            raise SimulationError(f"Row keys {sorted(row)} do not match columns {self.COLUMNS}.")
        for name in self.COLUMNS:
            self._data[name].append(row[name])

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self._data[name], dtype=float)

    def as_matrix(self) -> np.ndarray:
        if not len(self):
            return np.empty((0, len(self.COLUMNS)))
        return np.column_stack([self.column(name) for name in self.COLUMNS])

    def __len__(self) -> int:
        return len(self._data[self.COLUMNS[0]]) if self.COLUMNS else 0


# -------------------------------
# Lock base class
# -------------------------------
class LockBase(ABC):
    """
    Abstract base class for all simulated locks.

    strict=True re-raises faults; otherwise a run stops, keeps its partial
    trajectory and records a diagnostic.
    """

    def __init__(self, name: str, strict: bool = False):
        self.name = name
        self.strict = strict
        logger.debug(f"{type(self).__name__} '{name}' initialized (strict={strict}).")

    @abstractmethod
    def run(self, duration_s: float) -> Trajectory:
        """Simulate the lock for duration_s and return its trajectory."""

    def _abort(self, trajectory: Trajectory, error: SimulationError) -> Trajectory:
        """Handle a run fault according to the strict setting."""
        logger.error(f"{self.name}: run aborted after {len(trajectory)} steps: {error}")
        if self.strict:
            raise error
        trajectory.aborted = True
        trajectory.diagnostic = f"{type(error).__name__}: {error}"
        return trajectory

    @staticmethod
    def _check_controller(ctrl: PiController, step: int) -> None:
        if ctrl.faulted:
            raise ControllerFault(f"Controller fault at step {step} (non-finite error).")


# -------------------------------
# Gain calibration
# -------------------------------
def bisect_gain(measure: Callable[[float], float], target: float, lo: float, hi: float,
                rel_tol: float = 0.01, max_iter: int = 60) -> Tuple[float, float]:
    """
    Find a gain whose measured response equals target, assuming measure() increases with gain.

    The upper bracket is doubled until it overshoots the target.

    Returns:
        Tuple[float, float]: (gain, measured value at that gain).
    """
    value_hi = measure(hi)
    expansions = 0
    while value_hi < target:
        lo, hi = hi, hi * 2.0
        value_hi = measure(hi)
        expansions += 1
        if expansions > 40:
            raise SimulationError(f"Could not bracket target {target}; last value {value_hi}.")

    best_gain, best_value = hi, value_hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        value = measure(mid)
        if abs(value - target) < abs(best_value - target):
            best_gain, best_value = mid, value
        if abs(value - target) <= rel_tol * abs(target):
            break
        if value < target:
            lo = mid
        else:
            hi = mid
    logger.info(f"Gain calibrated to {best_gain:.6g} (measured {best_value:.6g}, target {target}).")
    return best_gain, best_value
