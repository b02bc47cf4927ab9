"""
Response metrics
----------------
Step-response figures of merit for lock reacquisition runs and the
linear-regression residual used to compare averaging lengths.
"""

from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.error_handling import AnalysisError, NoStepFoundError
from src.utils.logging_utils import get_logger

# Logging configuration
logger = get_logger("Metrics")

SETTLE_BAND = 0.01


def step_response_metrics(t_s: Sequence[float], values: Sequence[float],
                          step_time_s: Optional[float] = None) -> Dict[str, float]:
    """
    Characterize the response of a tracked frequency to a commanded step.

    Args:
        t_s: Sample times.
        values: Tracked value (e.g. f_0) at each time.
        step_time_s: Time of the commanded step. When omitted, the first sample
            that departs from the initial value marks the step.

    Returns:
        Dict[str, float]: slew_hz_per_s (max |df/dt| after the step), settle_time_s
        (to within 1% of the step), overshoot (fraction of the step), step_hz.

    Raises:
        NoStepFoundError: If the trajectory never moves.
        AnalysisError: If the inputs are malformed.
    """
    t = np.asarray(t_s, dtype=float)
    f = np.asarray(values, dtype=float)
    if t.shape != f.shape or t.ndim != 1 or t.size < 3:
        raise AnalysisError("Step response needs matching 1-D time and value arrays of at least 3 samples.")
    if np.any(np.diff(t) <= 0):
        raise AnalysisError("Step response times must be strictly increasing.")

    scale = max(1.0, float(np.max(np.abs(f))))
    tolerance = 1e-12 * scale

    if step_time_s is None:
        moved = np.nonzero(np.abs(f - f[0]) > tolerance)[0]
        if moved.size == 0:
            raise NoStepFoundError("No step found: the trajectory never moves.")
        start = max(int(moved[0]) - 1, 0)
        step_time_s = float(t[start])
    else:
        before = np.nonzero(t < step_time_s)[0]
        start = int(before[-1]) if before.size else 0

    post = f[start:]
    post_t = t[start:]
    tail = post[-max(1, post.size // 10):]
    baseline = float(f[start])
    final = float(np.mean(tail))
    step = final - baseline
    if abs(step) <= max(tolerance, 1e-9 * abs(baseline)):
        raise NoStepFoundError(f"No step found after t={step_time_s} s (net change {step:.3g}).")

    slew = float(np.max(np.abs(np.diff(post) / np.diff(post_t))))

    outside = np.nonzero(np.abs(post - final) > SETTLE_BAND * abs(step))[0]
    if outside.size == 0:
        settle = 0.0
    elif outside[-1] + 1 < post.size:
        settle = float(post_t[outside[-1] + 1] - step_time_s)
    else:
        settle = float(post_t[-1] - step_time_s)

    excursion = np.sign(step) * (post - final)
    overshoot = max(0.0, float(np.max(excursion))) / abs(step)

    logger.debug(f"Step {step:.4g}: slew {slew:.4g}/s, settle {settle:.4g} s, overshoot {overshoot:.3%}.")
    return {
        "slew_hz_per_s": slew,
        "settle_time_s": settle,
        "overshoot": overshoot,
        "step_hz": step,
    }


def linreg_residual(points: Union[Sequence[Tuple[float, float]], np.ndarray]) -> float:
    """
    Mean squared residual of an ordinary least-squares line (units squared).

    Raises:
        AnalysisError: Fewer than 3 points or all abscissae equal.
    """
    data = np.asarray(points, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 3:
        raise AnalysisError("Linear regression needs at least 3 (x, y) points.")
    x, y = data[:, 0], data[:, 1]
    if np.ptp(x) == 0:
        raise AnalysisError("Linear regression abscissa is degenerate (all x equal).")
    centered = x - x.mean()
    slope, intercept = np.polyfit(centered, y, 1)
    residual = y - (slope * centered + intercept)
    return float(np.mean(residual ** 2))
