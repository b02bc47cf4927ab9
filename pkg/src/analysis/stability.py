"""
Frequency stability
-------------------
Overlapping Allan deviation of uniformly sampled frequency records, with
chi-squared standard errors from the white-FM equivalent degrees of freedom.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.utils.error_handling import AnalysisError
from src.utils.logging_utils import get_logger

# Logging configuration
logger = get_logger("Stability")


@dataclass(frozen=True)
class FreqSeries:
    """Uniformly sampled frequency (or voltage) record."""
    values: np.ndarray
    uniform_dt_s: float
    t0_s: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise AnalysisError("A frequency series needs at least 2 samples.")
        if not self.uniform_dt_s > 0:
            raise AnalysisError(f"Sample spacing must be positive, got {self.uniform_dt_s}.")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_samples(cls, samples: Sequence[Tuple[float, float]]) -> "FreqSeries":
        """
        Build a series from (t_s, value) pairs.

        Raises:
            AnalysisError: If the spacing is not uniform within 1e-9 relative.
        """
        data = np.asarray(samples, dtype=float)
        if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 2:
            raise AnalysisError("Expected at least 2 (t_s, value) samples.")
        steps = np.diff(data[:, 0])
        dt = float(np.mean(steps))
        if dt <= 0 or np.max(np.abs(steps - dt)) > 1e-9 * dt:
            raise AnalysisError("Sample spacing is not uniform.")
        return cls(values=data[:, 1], uniform_dt_s=dt, t0_s=float(data[0, 0]))

    @property
    def span_s(self) -> float:
        return self.values.size * self.uniform_dt_s

    @property
    def times_s(self) -> np.ndarray:
        return self.t0_s + np.arange(self.values.size) * self.uniform_dt_s


@dataclass
class AdevCurve:
    """Allan deviation points, their standard errors, and per-tau rejections."""
    taus_s: np.ndarray
    adev: np.ndarray
    stderr: np.ndarray
    edf: np.ndarray
    errors: Dict[float, str] = field(default_factory=dict)

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.taus_s.tolist(), self.adev.tolist()))


def white_fm_edf(n_samples: int, m: int) -> float:
    """Equivalent degrees of freedom of the overlapping estimator for white FM."""
    edf = (3.0 * (n_samples - 1) / (2.0 * m) - 2.0 * (n_samples - 2) / n_samples) \
        * (4.0 * m * m) / (4.0 * m * m + 5.0)
    return max(edf, 1.0)


def allan_deviation(series: FreqSeries, taus: Sequence[float]) -> AdevCurve:
    """
    Overlapping Allan deviation sigma(tau) = sqrt(1/2 <(y_{k+m} - y_k)^2>) over tau-long averages.

    Taus that are not integer multiples of the sample spacing, or exceed a
    third of the record, are reported in AdevCurve.errors instead of failing.
    """
    y = series.values - series.values.mean()
    n = y.size
    cumulative = np.concatenate(([0.0], np.cumsum(y)))
    dt = series.uniform_dt_s

    good_taus, devs, errs, edfs = [], [], [], []
    errors: Dict[float, str] = {}
    for tau in sorted(set(float(t) for t in taus)):
        m_float = tau / dt
        m = int(round(m_float))
        if m < 1 or abs(m_float - m) > 1e-9 * max(1.0, m_float):
            errors[tau] = f"tau={tau} s is not an integer multiple of dt={dt} s"
            continue
        if tau > series.span_s / 3.0 * (1.0 + 1e-12):
            errors[tau] = f"tau={tau} s exceeds a third of the {series.span_s} s record"
            continue
        averages = (cumulative[m:] - cumulative[:-m]) / m
        differences = averages[m:] - averages[:-m]
        sigma = math.sqrt(0.5 * float(np.mean(differences ** 2)))
        edf = white_fm_edf(n, m)
        good_taus.append(m * dt)
        devs.append(sigma)
        errs.append(sigma / math.sqrt(2.0 * edf))
        edfs.append(edf)

    if errors:
        logger.warning(f"{len(errors)} tau value(s) rejected: {sorted(errors)}")
    return AdevCurve(
        taus_s=np.asarray(good_taus),
        adev=np.asarray(devs),
        stderr=np.asarray(errs),
        edf=np.asarray(edfs),
        errors=errors,
    )


def octave_taus(series: FreqSeries) -> List[float]:
    """Taus at dt * 2^k up to a third of the record."""
    taus = []
    m = 1
    while m * series.uniform_dt_s <= series.span_s / 3.0:
        taus.append(m * series.uniform_dt_s)
        m *= 2
    return taus


def allan_slope(curve: AdevCurve, tau_min: Optional[float] = None,
                tau_max: Optional[float] = None) -> float:
    """Log-log slope of an Allan curve between tau_min and tau_max (white FM gives -1/2)."""
    mask = curve.adev > 0
    if tau_min is not None:
        mask &= curve.taus_s >= tau_min
    if tau_max is not None:
        mask &= curve.taus_s <= tau_max
    if np.count_nonzero(mask) < 2:
        raise AnalysisError("Need at least two non-zero Allan points to estimate a slope.")
    slope, _ = np.polyfit(np.log10(curve.taus_s[mask]), np.log10(curve.adev[mask]), 1)
    return float(slope)
