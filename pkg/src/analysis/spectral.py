"""
Spectral estimation
-------------------
Welch power spectral density, band power and peak picking for DAC output
waveforms and lock error records.
"""

from dataclasses import dataclass

import numpy as np
from scipy import signal

from src.utils.error_handling import AnalysisError
from src.utils.logging_utils import get_logger

# Logging configuration
logger = get_logger("Spectral")


@dataclass(frozen=True)
class Spectrum:
    """One-sided PSD (units^2/Hz) with its bin spacing and equivalent noise bandwidth."""
    freqs_hz: np.ndarray
    psd: np.ndarray
    fs_hz: float
    enbw_hz: float
    resolution_hz: float
    segment_length: int

    @property
    def total_power(self) -> float:
        return float(np.sum(self.psd) * self.resolution_hz)


def psd_estimate(waveform: np.ndarray, fs_hz: float, segment_length: int,
                 overlap: float = 0.5) -> Spectrum:
    """
    Averaged-periodogram (Welch) PSD with a Hann window.

    Args:
        waveform (np.ndarray): Uniformly sampled real signal.
        fs_hz (float): Sample rate.
        segment_length (int): Samples per segment; must be a power of two.
        overlap (float): Fractional segment overlap in [0, 1).

    Returns:
        Spectrum: Density-scaled PSD whose integral equals the signal variance.

    Raises:
        AnalysisError: Short input, non power-of-two segment, or bad overlap.
    """
    x = np.asarray(waveform, dtype=float)
    if x.ndim != 1:
        raise AnalysisError("PSD input must be one-dimensional.")
    if segment_length < 2 or segment_length & (segment_length - 1):
        raise AnalysisError(f"Segment length must be a power of two, got {segment_length}.")
    if x.size < segment_length:
        raise AnalysisError(f"Waveform of {x.size} samples is shorter than one {segment_length}-sample segment.")
    if not 0.0 <= overlap < 1.0:
        raise AnalysisError(f"Overlap must be in [0, 1), got {overlap}.")
    if not fs_hz > 0:
        raise AnalysisError("Sample rate must be positive.")

    freqs, psd = signal.welch(
        x,
        fs=fs_hz,
        window="hann",
        nperseg=segment_length,
        noverlap=int(overlap * segment_length),
        detrend="constant",
        scaling="density",
    )
    window = signal.get_window("hann", segment_length)
    enbw = fs_hz * float(np.sum(window ** 2)) / float(np.sum(window)) ** 2
    logger.debug(f"PSD of {x.size} samples: {segment_length}-point segments, ENBW {enbw:.4g} Hz.")
    return Spectrum(
        freqs_hz=freqs,
        psd=psd,
        fs_hz=float(fs_hz),
        enbw_hz=enbw,
        resolution_hz=fs_hz / segment_length,
        segment_length=segment_length,
    )


def band_power(spectrum: Spectrum, f_lo_hz: float, f_hi_hz: float) -> float:
    """
    Integrated PSD over [f_lo, f_hi].

    Raises:
        AnalysisError: Empty band or band outside the spectrum.
    """
    if not f_lo_hz < f_hi_hz:
        raise AnalysisError(f"Empty band [{f_lo_hz}, {f_hi_hz}] Hz.")
    if f_lo_hz < spectrum.freqs_hz[0] or f_hi_hz > spectrum.freqs_hz[-1]:
        raise AnalysisError(
            f"Band [{f_lo_hz}, {f_hi_hz}] Hz lies outside the spectrum "
            f"[{spectrum.freqs_hz[0]}, {spectrum.freqs_hz[-1]}] Hz."
        )
    mask = (spectrum.freqs_hz >= f_lo_hz) & (spectrum.freqs_hz <= f_hi_hz)
    return float(np.sum(spectrum.psd[mask]) * spectrum.resolution_hz)


def find_peaks(spectrum: Spectrum, prominence_db: float = 10.0, f_min_hz: float = 0.0) -> np.ndarray:
    """Frequencies of spectral lines standing at least prominence_db above their surroundings."""
    level_db = 10.0 * np.log10(np.maximum(spectrum.psd, np.finfo(float).tiny))
    indices, _ = signal.find_peaks(level_db, prominence=prominence_db)
    freqs = spectrum.freqs_hz[indices]
    return freqs[freqs >= f_min_hz]
