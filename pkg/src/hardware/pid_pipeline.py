"""
Eight-channel digital PID pipeline
----------------------------------
ADC reader -> per-channel oversampler -> discrete PID filter -> output
processor (affine transform + bounds) -> rate-capped DAC/DDS route.

Channels are serviced one at a time in ascending order within each ADC frame;
one frame carries one sample for each of the eight channels.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.base.sigcore import AdcSpec, adc_quantize
from src.utils.error_handling import ChannelError
from src.utils.logging_utils import get_logger

# Logging configuration
logger = get_logger("PidPipeline")

NUM_CHANNELS = 8
DEFAULT_FRAME_RATE_HZ = 200.0e3
ROUTE_RATE_CAPS_HZ: Dict[str, float] = {
    "dc_dac": 66.0e3,
    "dds_frequency": 100.0e3,
    "dds_amplitude": 100.0e3,
}
ANTI_WINDUP_SPAN_FACTOR = 2.0

ErrorSource = Union[Sequence[float], np.ndarray, Callable[[float, int], float], None]


# ---------------------------------------------------------------------
# Configuration and state
# ---------------------------------------------------------------------
@dataclass(frozen=True)
class PidChannelConfig:
    """
    One PID channel.

    With accumulate=True the output processor adds a*u to the previous output
    (b is then the starting output); otherwise y = a*u + b.

    The integral term integrates e*dt with dt = oversample_ratio / frame_rate_hz.
    An incremental PI law that adds I*sum(e) per averaged sample is therefore
    reproduced with i_gain = I * frame_rate_hz / oversample_ratio; see
    pipeline_integral_gain.
    """
    p_gain: float = 0.0
    i_gain: float = 0.0
    d_gain: float = 0.0
    oversample_ratio: int = 1
    output_route: str = "dc_dac"
    bounds: Tuple[float, float] = (-10.0, 10.0)
    linear_transform: Tuple[float, float] = (1.0, 0.0)
    enabled: bool = True
    accumulate: bool = False

    def __post_init__(self):
        if self.output_route not in ROUTE_RATE_CAPS_HZ:
            raise ChannelError(f"Unknown output route '{self.output_route}'; expected one of {sorted(ROUTE_RATE_CAPS_HZ)}.")
        if self.oversample_ratio < 1 or int(self.oversample_ratio) != self.oversample_ratio:
            raise ChannelError(f"Oversample ratio must be an integer >= 1, got {self.oversample_ratio}.")
        if not self.bounds[0] <= self.bounds[1]:
            raise ChannelError(f"Output bounds {self.bounds} are inverted.")

    @property
    def rate_cap_hz(self) -> float:
        return ROUTE_RATE_CAPS_HZ[self.output_route]

    @property
    def integral_limit(self) -> float:
        """Largest |I * integral| the anti-windup allows."""
        return ANTI_WINDUP_SPAN_FACTOR * (self.bounds[1] - self.bounds[0])


def pipeline_integral_gain(incremental_i_gain: float, frame_rate_hz: float, oversample_ratio: int = 1) -> float:
    """
    Channel i_gain equivalent to the I gain of an incremental PI law run once per
    averaged sample.

    Raises:
        ChannelError: If the frame rate or oversample ratio is not positive.
    """
    if not frame_rate_hz > 0 or oversample_ratio < 1:
        raise ChannelError(f"Need a positive frame rate and oversample ratio, got {frame_rate_hz}, {oversample_ratio}.")
    return incremental_i_gain * frame_rate_hz / oversample_ratio


@dataclass
class ChannelState:
    running_sum: float = 0.0
    count: int = 0
    integral: float = 0.0
    previous_error: Optional[float] = None
    last_output: Optional[float] = None
    faulted: bool = False


@dataclass
class PipelineState:
    channels: List[ChannelState] = field(default_factory=lambda: [ChannelState() for _ in range(NUM_CHANNELS)])

    def channel(self, index: int) -> ChannelState:
        if not 0 <= index < NUM_CHANNELS:
            raise ChannelError(f"Channel index {index} out of range 0..{NUM_CHANNELS - 1}.")
        return self.channels[index]


# ---------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------
def oversample_accumulate(state: PipelineState, channel: int, sample: float, ratio: int = 1) -> Optional[float]:
    """
    Add one sample to a channel's running average.

    Returns:
        Optional[float]: The mean once `ratio` samples have accumulated (the
        accumulator then resets), otherwise None.

    Raises:
        ChannelError: If channel is out of range.
    """
    chan = state.channel(channel)
    chan.running_sum += sample
    chan.count += 1
    if chan.count < ratio:
        return None
    mean = chan.running_sum / chan.count
    chan.running_sum = 0.0
    chan.count = 0
    return mean


def pid_filter_step(chan: ChannelState, config: PidChannelConfig, error: float, dt: float) -> Optional[float]:
    """
    Discrete PID: u = P*e + I*(integral += e*dt) + D*(e - e_prev)/dt.

    A non-finite error faults the channel and returns None; the output stays frozen.
    """
    if dt <= 0:
        raise ChannelError(f"PID time step must be positive, got {dt}.")
    if chan.faulted:
        return None
    if not math.isfinite(error):
        chan.faulted = True
        logger.warning(f"PID channel received non-finite error {error}; channel faulted.")
        return None

    chan.integral += error * dt
    if config.i_gain != 0.0:
        limit = config.integral_limit / abs(config.i_gain)
        chan.integral = min(max(chan.integral, -limit), limit)
    derivative = 0.0 if chan.previous_error is None else (error - chan.previous_error) / dt
    chan.previous_error = error
    return config.p_gain * error + config.i_gain * chan.integral + config.d_gain * derivative


def output_process(u: float, config: PidChannelConfig, last_output: Optional[float] = None) -> float:
    """Apply the affine transform (or accumulate) and clamp to the channel bounds."""
    a, b = config.linear_transform
    if config.accumulate:
        base = b if last_output is None else last_output
        value = base + a * u
    else:
        value = a * u + b
    return min(max(value, config.bounds[0]), config.bounds[1])


class RouteLimiter:
    """
    Enforces an output route's update-rate cap. Updates arriving too early are
    coalesced (last value wins) and counted as dropped.
    """

    def __init__(self, rate_cap_hz: float):
        self.min_interval_s = 1.0 / rate_cap_hz
        self.emitted: List[Tuple[float, float]] = []
        self.dropped = 0
        self._pending: Optional[Tuple[float, float]] = None
        self._last_emit_s: Optional[float] = None

    def _due(self, t_s: float) -> bool:
        return self._last_emit_s is None or t_s - self._last_emit_s >= self.min_interval_s * (1.0 - 1e-9)

    def offer(self, t_s: float, value: float) -> bool:
        """Route one update; returns True if it reached the output immediately."""
        if self._due(t_s):
            self.emitted.append((t_s, value))
            self._last_emit_s = t_s
            self._pending = None
            return True
        self._pending = (t_s, value)
        self.dropped += 1
        return False

    def flush(self) -> None:
        """Emit the coalesced value still waiting at the end of a run."""
        if self._pending is None:
            return
        t_s, value = self._pending
        if self._last_emit_s is not None:
            t_s = max(t_s, self._last_emit_s + self.min_interval_s)
        self.emitted.append((t_s, value))
        self._last_emit_s = t_s
        self._pending = None
        self.dropped -= 1


# ---------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------
@dataclass
class ChannelLog:
    """Per-channel record: every processed output plus what the route actually emitted."""
    channel: int
    route: str
    t_s: List[float] = field(default_factory=list)
    error_v: List[float] = field(default_factory=list)
    output_value: List[float] = field(default_factory=list)
    routed: List[Tuple[float, float]] = field(default_factory=list)
    dropped_updates: int = 0
    diagnostic: Optional[str] = None

    def as_matrix(self) -> np.ndarray:
        return np.column_stack([
            np.asarray(self.t_s, dtype=float),
            np.asarray(self.error_v, dtype=float),
            np.asarray(self.output_value, dtype=float),
        ]) if self.t_s else np.empty((0, 3))


class PidPipeline:
    """Cycle-deterministic model of the eight-channel pipeline."""

    def __init__(self, configs: Sequence[Optional[PidChannelConfig]], frame_rate_hz: float = DEFAULT_FRAME_RATE_HZ,
                 adc: Optional[AdcSpec] = None, adc_seed: Optional[int] = None):
        if len(configs) > NUM_CHANNELS:
            raise ChannelError(f"The pipeline has {NUM_CHANNELS} channels, got {len(configs)} configs.")
        padded = list(configs) + [None] * (NUM_CHANNELS - len(configs))
        self.configs = [cfg if cfg is not None else PidChannelConfig(enabled=False) for cfg in padded]
        self.frame_rate_hz = frame_rate_hz
        self.adc = adc
        self.state = PipelineState()
        self.limiters = [RouteLimiter(cfg.rate_cap_hz) for cfg in self.configs]
        self.logs = [ChannelLog(channel=i, route=cfg.output_route) for i, cfg in enumerate(self.configs)]
        self._adc_rngs = [np.random.default_rng([adc_seed or 0, i]) for i in range(NUM_CHANNELS)]
        logger.info(f"Pipeline configured with {sum(cfg.enabled for cfg in self.configs)} enabled channel(s) "
                    f"at {frame_rate_hz:g} frames/s.")

    def _fault(self, channel: int, message: str) -> None:
        self.state.channels[channel].faulted = True
        if self.logs[channel].diagnostic is None:
            self.logs[channel].diagnostic = message
            logger.error(f"Channel {channel} faulted: {message}")

    def process_sample(self, channel: int, sample: float, t_s: float) -> None:
        cfg = self.configs[channel]
        chan = self.state.channel(channel)
        if not cfg.enabled or chan.faulted:
            return
        if self.adc is not None:
            sample = adc_quantize(sample, self.adc, self._adc_rngs[channel]).volts
        averaged = oversample_accumulate(self.state, channel, sample, cfg.oversample_ratio)
        if averaged is None:
            return
        u = pid_filter_step(chan, cfg, averaged, cfg.oversample_ratio / self.frame_rate_hz)
        if u is None:
            self._fault(channel, f"non-finite error at t={t_s:.6g} s")
            return
        y = output_process(u, cfg, chan.last_output)
        chan.last_output = y
        log = self.logs[channel]
        log.t_s.append(t_s)
        log.error_v.append(averaged)
        log.output_value.append(y)
        self.limiters[channel].offer(t_s, y)

    def run(self, sources: Sequence[ErrorSource], duration_s: float) -> List[ChannelLog]:
        """
        Process int(duration_s * frame_rate_hz) frames.

        Each source is an indexable sequence of volts, a callable (t_s, frame) -> volts,
        or None for an idle channel.
        """
        padded = list(sources) + [None] * (NUM_CHANNELS - len(sources))
        n_frames = int(round(duration_s * self.frame_rate_hz))
        slot = 1.0 / (self.frame_rate_hz * NUM_CHANNELS)
        for frame in range(n_frames):
            t_frame = frame / self.frame_rate_hz
            for channel in range(NUM_CHANNELS):
                source = padded[channel]
                if source is None or not self.configs[channel].enabled or self.state.channels[channel].faulted:
                    continue
                t_s = t_frame + channel * slot
                try:
                    sample = float(source(t_s, frame)) if callable(source) else float(source[frame])
                except (IndexError, TypeError, ValueError) as e:
                    self._fault(channel, f"error source failed at frame {frame}: {e}")
                    continue
                self.process_sample(channel, sample, t_s)

        for channel, limiter in enumerate(self.limiters):
            limiter.flush()
            self.logs[channel].routed = list(limiter.emitted)
            self.logs[channel].dropped_updates = limiter.dropped
            if limiter.dropped:
                logger.warning(f"Channel {channel}: {limiter.dropped} update(s) coalesced by the "
                               f"{self.configs[channel].output_route} rate cap.")
        return self.logs


def pipeline_run(configs: Sequence[Optional[PidChannelConfig]], sources: Sequence[ErrorSource], duration_s: float,
                 frame_rate_hz: float = DEFAULT_FRAME_RATE_HZ, adc: Optional[AdcSpec] = None,
                 adc_seed: Optional[int] = None) -> List[ChannelLog]:
    """Run the pipeline over the given error sources; returns one log per channel."""
    return PidPipeline(configs, frame_rate_hz=frame_rate_hz, adc=adc, adc_seed=adc_seed).run(sources, duration_s)
