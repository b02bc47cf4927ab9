"""
error_handling.py
-----------------
Centralized error and exception classes for the control-hardware simulator.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence


class SimulationError(Exception):
    """Generic error for simulation operations."""
    pass


@dataclass(frozen=True)
class ConfigIssue:
    """One configuration problem, anchored to a key path and (when known) a file line."""
    path: str
    message: str
    line: Optional[int] = None

    def __str__(self) -> str:
        where = f"line {self.line}: " if self.line is not None else ""
        return f"{where}{self.path or '<root>'}: {self.message}"


class ConfigError(SimulationError):
    """Exception raised for configuration loading and validation issues."""

    def __init__(self, message: str, issues: Optional[Sequence[ConfigIssue]] = None):
        self.issues: List[ConfigIssue] = list(issues or [])
        if self.issues:
            message = message + "\n" + "\n".join(f"  - {issue}" for issue in self.issues)
        super().__init__(message)


class RangeError(SimulationError):
    """Exception raised when a value falls outside the representable hardware range."""
    pass


class ControllerFault(SimulationError):
    """Exception raised when a feedback controller receives a non-finite error."""
    pass


class FeedForwardRangeError(SimulationError):
    """Exception raised when the fed-forward AOM frequency leaves its tunable range."""
    pass


class CaptureRangeError(SimulationError):
    """Exception raised when a beat note is outside the photodiode bandwidth."""
    pass


class ChannelError(SimulationError):
    """Exception raised for PID pipeline channel issues."""
    pass


class ProgramError(SimulationError):
    """Exception raised for invalid DAC voltage programs."""
    pass


class UnderSampledError(SimulationError):
    """Exception raised when a waveform is sampled too slowly for the requested operation."""
    pass


class AnalysisError(SimulationError):
    """Exception raised when an analysis precondition is not met."""
    pass


class NoStepFoundError(AnalysisError):
    """Exception raised when a step response contains no step."""
    pass


class FitError(AnalysisError):
    """Exception raised when a model fit does not converge."""

    def __init__(self, message: str, residual_rms: Optional[float] = None):
        self.residual_rms = residual_rms
        if residual_rms is not None:
            message = f"{message} (residual rms {residual_rms:.3g})"
        super().__init__(message)
