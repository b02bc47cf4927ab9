"""
Ramsey coherence
----------------
Monte Carlo Ramsey visibility from a detuning source, the fringe-fit
cross-check, and the Gaussian coherence-time fit A*exp(-tau^2/alpha^2).
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import curve_fit

from src.utils.error_handling import AnalysisError, FitError
from src.utils.logging_utils import get_logger

# Logging configuration
logger = get_logger("Coherence")

MIN_TRIALS = 100
AMPLITUDE_MAX = 1.05
# Coherence times beyond this multiple of the longest delay are indistinguishable from no decay
NO_DECAY_ALPHA_RATIO = 1000.0


# -------------------------------
# Detuning sources
# -------------------------------
@dataclass(frozen=True)
class StaticGaussianDetuning:
    """Detuning constant within a trial, Gaussian across trials."""
    sigma_hz: float
    mean_hz: float = 0.0

    def phases(self, tau_s: float, n_trials: int, rng: np.random.Generator) -> np.ndarray:
        detuning = rng.normal(self.mean_hz, self.sigma_hz, size=n_trials) if self.sigma_hz > 0 \
            else np.full(n_trials, self.mean_hz)
        return 2.0 * math.pi * detuning * tau_s


class TrajectoryDetuning:
    """
    Detuning taken from a recorded residual trace (e.g. a comb-lock run).

    Each trial integrates the trace over a window starting at a random time.
    """

    def __init__(self, t_s: Sequence[float], detuning_hz: Sequence[float]):
        self.t_s = np.asarray(t_s, dtype=float)
        detuning = np.asarray(detuning_hz, dtype=float)
        if self.t_s.size < 2 or self.t_s.shape != detuning.shape:
            raise AnalysisError("Detuning trace needs matching time and value arrays of length >= 2.")
        self._cumulative = cumulative_trapezoid(detuning, self.t_s, initial=0.0)

    @property
    def span_s(self) -> float:
        return float(self.t_s[-1] - self.t_s[0])

    def phases(self, tau_s: float, n_trials: int, rng: np.random.Generator) -> np.ndarray:
        if tau_s > self.span_s:
            raise AnalysisError(f"Ramsey delay {tau_s} s exceeds the {self.span_s} s detuning trace.")
        starts = rng.uniform(self.t_s[0], self.t_s[-1] - tau_s, size=n_trials)
        integral = np.interp(starts + tau_s, self.t_s, self._cumulative) \
            - np.interp(starts, self.t_s, self._cumulative)
        return 2.0 * math.pi * integral


# -------------------------------
# Visibility
# -------------------------------
def ramsey_visibility(source, tau_s: float, n_trials: int, rng: np.random.Generator) -> float:
    """
    Fringe visibility |<exp(i*phi)>| at Ramsey delay tau_s.

    Raises:
        AnalysisError: If fewer than 100 trials are requested.
    """
    if n_trials < MIN_TRIALS:
        raise AnalysisError(f"Ramsey visibility needs at least {MIN_TRIALS} trials, got {n_trials}.")
    if tau_s < 0:
        raise AnalysisError("Ramsey delay must be non-negative.")
    phases = source.phases(tau_s, n_trials, rng)
    return float(min(1.0, abs(np.mean(np.exp(1j * phases)))))


def ramsey_fringe_contrast(phases: np.ndarray, analysis_phases: Sequence[float]) -> float:
    """
    Fringe amplitude from scanning the phase of the second pulse.

    P(theta) = <(1 + cos(phi + theta))/2> is fitted with 1/2 + C/2*cos(theta + theta_0)
    by linear least squares; C is returned.
    """
    theta = np.asarray(analysis_phases, dtype=float)
    if theta.size < 3:
        raise AnalysisError("Need at least 3 analysis phases to fit a fringe.")
    phi = np.asarray(phases, dtype=float)
    population = 0.5 * (1.0 + np.cos(phi[None, :] + theta[:, None])).mean(axis=1)
    design = np.column_stack([np.cos(theta), np.sin(theta)])
    (a, b), *_ = np.linalg.lstsq(design, population - 0.5, rcond=None)
    return float(2.0 * math.hypot(a, b))


# -------------------------------
# Gaussian coherence fit
# -------------------------------
@dataclass(frozen=True)
class CoherenceFit:
    """A*exp(-tau^2/alpha^2) fit; alpha is inf when no decay is measurable."""
    amplitude: float
    coherence_time_alpha_s: float
    amplitude_stderr: float
    alpha_stderr: float
    no_decay: bool = False
    residual_rms: float = 0.0


def _gaussian(x, amplitude, alpha):
    return amplitude * np.exp(-(x / alpha) ** 2)


def gaussian_alpha_for_sigma(sigma_hz: float) -> float:
    """Coherence time produced by static Gaussian detuning of standard deviation sigma_hz."""
    return 1.0 / (math.sqrt(2.0) * math.pi * sigma_hz)


def _no_decay_fit(visibility: np.ndarray) -> CoherenceFit:
    amplitude = float(np.mean(visibility))
    logger.warning("Visibility shows no measurable decay; coherence time reported as infinite.")
    return CoherenceFit(
        amplitude=min(amplitude, AMPLITUDE_MAX),
        coherence_time_alpha_s=math.inf,
        amplitude_stderr=float(np.std(visibility) / math.sqrt(visibility.size)),
        alpha_stderr=math.inf,
        no_decay=True,
        residual_rms=float(np.sqrt(np.mean((visibility - amplitude) ** 2))),
    )


def fit_gaussian_coherence(points: Sequence[Tuple[float, float]]) -> CoherenceFit:
    """
    Fit visibility-versus-delay points with A*exp(-tau^2/alpha^2).

    Delays are normalized by the largest one before fitting, so scaling every
    delay by c scales alpha by c. A log-linear fit seeds the nonlinear refinement.

    Raises:
        AnalysisError: Fewer than 4 points or a non-positive delay.
        FitError: If the refinement does not converge.
    """
    data = np.asarray(points, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 4:
        raise AnalysisError("Coherence fit needs at least 4 (tau, visibility) points.")
    tau, visibility = data[:, 0], data[:, 1]
    if np.any(tau <= 0):
        raise AnalysisError("Coherence fit delays must be positive.")

    scale = float(np.max(tau))
    x = tau / scale
    usable = visibility > 1e-3
    if np.count_nonzero(usable) < 2:
        raise FitError("Visibility has fully decayed at every delay.")
    slope, intercept = np.polyfit(x[usable] ** 2, np.log(visibility[usable]), 1)

    if -slope < NO_DECAY_ALPHA_RATIO ** -2:
        return _no_decay_fit(visibility)

    a0 = min(max(math.exp(intercept), 1e-6), AMPLITUDE_MAX)
    alpha0 = 1.0 / math.sqrt(-slope)
    try:
        popt, pcov = curve_fit(
            _gaussian, x, visibility,
            p0=[a0, alpha0],
            bounds=([0.0, 1e-12], [AMPLITUDE_MAX, np.inf]),
        )
    except (RuntimeError, ValueError) as e:
        residual = visibility - _gaussian(x, a0, alpha0)
        logger.exception("Gaussian coherence fit failed.")
        raise FitError(f"Gaussian coherence fit did not converge: {e}",
                       residual_rms=float(np.sqrt(np.mean(residual ** 2))))

    if popt[1] > NO_DECAY_ALPHA_RATIO:
        return _no_decay_fit(visibility)

    residual = visibility - _gaussian(x, *popt)
    errors = np.sqrt(np.clip(np.diag(pcov), 0.0, np.inf))
    fit = CoherenceFit(
        amplitude=float(popt[0]),
        coherence_time_alpha_s=float(popt[1] * scale),
        amplitude_stderr=float(errors[0]),
        alpha_stderr=float(errors[1] * scale),
        residual_rms=float(np.sqrt(np.mean(residual ** 2))),
    )
    logger.info(f"Coherence fit: A={fit.amplitude:.4f}, alpha={fit.coherence_time_alpha_s:.4g} s "
                f"(+/- {fit.alpha_stderr:.2g} s).")
    return fit
