"""
Scenario runners
----------------
One runner per scenario kind. A runner turns the merged parameters of a
validated Scenario into module calls, writes its CSV artifacts and adds its
metrics, with provenance, to the RunReport.

Faults raised by the modules propagate to the caller, which records them in
the report; artifacts written before the fault are kept.
"""

import math
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from src.analysis.coherence import (
    StaticGaussianDetuning,
    TrajectoryDetuning,
    fit_gaussian_coherence,
    gaussian_alpha_for_sigma,
    ramsey_fringe_contrast,
    ramsey_visibility,
)
from src.analysis.metrics import step_response_metrics
from src.analysis.spectral import band_power, find_peaks, psd_estimate
from src.analysis.stability import FreqSeries, allan_deviation, allan_slope, octave_taus
from src.base.lock_base import PiController
from src.base.plant import BeatNotePlant, IntensityPlant, RepRatePlant
from src.base.sigcore import AdcSpec, FilterChain
from src.hardware.dac_system import (
    DAC_LSB_VOLTS,
    NUM_DAC_CHANNELS,
    DacNoiseSpec,
    DacTimingSpec,
    VoltageSet,
    apply_filter_chain,
    expand_program,
    load_program,
    load_program_file,
    run_sequence,
)
from src.hardware.pid_pipeline import PidChannelConfig, PidPipeline, pipeline_integral_gain, pipeline_run
from src.locks.comb_lock import (
    CombLockConfig,
    averaging_study,
    calibrate_slew,
    comb_lock_run,
    feed_forward_study,
    predicted_slew,
    tracks_ramp,
)
from src.locks.intensity_lock import (
    GateSchedule,
    IntensityLockConfig,
    IntensityLockState,
    calibrate_intensity_gains,
    intensity_lock_run,
)
from src.locks.offset_lock import OffsetLockConfig, normalized_gains, run_offset_locks
from src.scenarios.report import RunReport
from src.utils.artifacts import save_csv, save_jsonl
from src.utils.config_loader import Scenario, deep_merge
from src.utils.error_handling import AnalysisError, ConfigError, NoStepFoundError
from src.utils.logging_utils import get_logger

# Logging configuration
logger = get_logger("ScenarioRunners")

Runner = Callable[[Scenario, Path, RunReport], None]


# ---------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------
def derive_seeds(seed: int, count: int) -> List[int]:
    """Independent child seeds, one per random stream of a run."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1)[0]) for child in children]


def _adc(params: Dict[str, Any]) -> AdcSpec:
    return AdcSpec(**{key: value for key, value in params.items() if key != "enabled"})


def _comb_config(params: Dict[str, Any]) -> CombLockConfig:
    return CombLockConfig(**params["lock"], adc=_adc(params["adc"])) if "adc" in params \
        else CombLockConfig(**params["lock"])


def _save(report: RunReport, out_dir: Path, name: str, data: np.ndarray, columns: Sequence[str]) -> None:
    path = save_csv(data, columns, out_dir / name, fmt=report.float_format)
    report.artifacts.append(path.name)


def _duration(scenario: Scenario) -> float:
    if scenario.duration_s is None:
        raise ConfigError(f"Scenario '{scenario.name}' needs duration_s.")
    return float(scenario.duration_s)


def _record_fault(report: RunReport, label: str, trajectory) -> None:
    if trajectory.aborted and report.fault is None:
        report.fault = f"{label}: {trajectory.diagnostic}"


# ---------------------------------------------------------------------
# Comb lock
# ---------------------------------------------------------------------
def run_comb_lock(scenario: Scenario, out_dir: Path, report: RunReport) -> None:
    p = scenario.params
    plant_seed, adc_seed, ramsey_seed = derive_seeds(scenario.seed, 3)
    config = _comb_config(p)
    plant = RepRatePlant(**p["plant"], rng_seed=plant_seed)
    pi = PiController(**p["pi"], output_hz=plant.f_rep_hz)
    steps = [(float(s["t_s"]), float(s["delta_hz"])) for s in p["steps"]]

    trajectory = comb_lock_run(plant, config, pi, _duration(scenario), steps=steps, adc_seed=adc_seed,
                               strict=bool(p["strict"]))
    _save(report, out_dir, "comb_lock.csv", trajectory.as_matrix(), trajectory.COLUMNS)
    _record_fault(report, "comb_lock", trajectory)

    t = trajectory.column("t_s")
    locked = trajectory.column("locked") > 0
    residual = trajectory.column("residual_hz")
    report.add_metric("steps_run", len(trajectory), "comblock")
    report.add_metric("locked_fraction", float(np.mean(locked)) if locked.size else 0.0, "comblock")
    report.add_metric("lock_time_s", float(t[np.argmax(locked)]) if locked.any() else math.inf, "comblock", "s")
    report.add_metric("locked_residual_rms_hz",
                      float(np.sqrt(np.mean(residual[locked] ** 2))) if locked.any() else math.inf,
                      "comblock", "Hz")
    report.add_metric("final_residual_hz", float(residual[-1]) if residual.size else math.nan, "comblock", "Hz")

    if steps and len(trajectory):
        try:
            metrics = step_response_metrics(t, trajectory.column("f0_hz"), step_time_s=steps[0][0])
            report.add_metric("slew_hz_per_s", metrics["slew_hz_per_s"], "analysis.metrics", "Hz/s")
            report.add_metric("settle_time_s", metrics["settle_time_s"], "analysis.metrics", "s")
        except NoStepFoundError as e:
            logger.warning(f"No step response to characterize: {e}")

    ramsey = p["ramsey"]
    if ramsey["enabled"] and locked.any():
        source = TrajectoryDetuning(t[locked], residual[locked])
        rng = np.random.default_rng(ramsey_seed)
        taus = [tau for tau in ramsey["taus_s"] if tau <= source.span_s]
        points = [(tau, ramsey_visibility(source, tau, int(ramsey["n_trials"]), rng)) for tau in taus]
        _save(report, out_dir, "ramsey.csv", np.asarray(points), ("tau_s", "visibility"))
        fit = fit_gaussian_coherence(points)
        report.add_metric("coherence_alpha_s", fit.coherence_time_alpha_s, "analysis.coherence", "s")


def run_comb_calibration(scenario: Scenario, out_dir: Path, report: RunReport) -> None:
    p = scenario.params
    config = _comb_config(p)
    calibration = calibrate_slew(
        config,
        target_slew_hz_per_s=float(p["target_slew_hz_per_s"]),
        step_hz=float(p["step_hz"]),
        p_candidates=[float(c) for c in p["p_candidates"]],
        ramp_hz_per_s=float(p["ramp_hz_per_s"]),
    )
    report.add_metric("p_gain", calibration.p_gain, "comblock")
    report.add_metric("i_gain", calibration.i_gain, "comblock")
    report.add_metric("measured_slew_hz_per_s", calibration.measured_slew_hz_per_s, "comblock", "Hz/s")
    report.add_metric("slew_error_fraction",
                      abs(calibration.measured_slew_hz_per_s - p["target_slew_hz_per_s"]) / p["target_slew_hz_per_s"],
                      "comblock")
    report.add_metric("predicted_slew_hz_per_s",
                      predicted_slew(1.0, calibration.i_gain, config.mixer_limit_v, float(p["step_hz"]),
                                     config.loop_rate_hz),
                      "comblock", "Hz/s")

    f_rep = float(p["f_rep_hz"])
    trajectory = comb_lock_run(
        RepRatePlant(f_rep_hz=f_rep), config,
        PiController(p_gain=1.0, i_gain=calibration.i_gain, output_hz=f_rep),
        float(p["step_duration_s"]), steps=[(float(p["step_time_s"]), float(p["step_hz"]))], adc_seed=0,
    )
    _save(report, out_dir, "step_response.csv",
          np.column_stack([trajectory.column("t_s"), trajectory.column("f_rep_hz"), trajectory.column("f0_hz")]),
          ("t_s", "f_rep_hz", "f0_hz"))

    ok, worst = tracks_ramp(config, calibration.p_gain, calibration.i_gain, ramp_hz_per_s=float(p["ramp_hz_per_s"]),
                            f_rep_hz=f_rep)
    report.add_metric("ramp_tail_residual_hz", worst, "comblock", "Hz")
    report.add_metric("ramp_tracked", ok, "comblock")


def run_averaging(scenario: Scenario, out_dir: Path, report: RunReport) -> None:
    p = scenario.params
    config = _comb_config(p)
    n_values = [int(n) for n in p["n_values"]]
    variances = averaging_study(
        config,
        n_values=n_values,
        offsets_hz=[float(v) for v in p["offsets_hz"]],
        averaged_samples_per_segment=int(p["averaged_samples_per_segment"]),
        noise_rms_v=float(p["noise_rms_v"]),
        seed=scenario.seed,
    )
    n0 = n_values[0]
    rows = []
    for n in n_values:
        ratio = variances[n] / variances[n0] if variances[n0] > 0 else math.nan
        loop_rate = config.sample_rate_hz / n
        rows.append((n, loop_rate, variances[n], ratio))
        report.add_metric(f"variance_n{n}_v2", variances[n], "comblock", "V^2")
        report.add_metric(f"variance_ratio_n{n}", ratio, "comblock")
        report.add_metric(f"scaled_ratio_n{n}", ratio * n / n0, "comblock")
        report.add_metric(f"loop_rate_n{n}_hz", loop_rate, "comblock", "Hz")
    _save(report, out_dir, "averaging.csv", np.asarray(rows, dtype=float),
          ("n", "loop_rate_hz", "residual_variance_v2", "ratio"))


def run_feed_forward(scenario: Scenario, out_dir: Path, report: RunReport) -> None:
    p = scenario.params
    study = feed_forward_study(
        _comb_config(p),
        f_rep_hz=float(p["f_rep_hz"]),
        n_sequences=int(p["n_sequences"]),
        n_steps=int(p["n_steps"]),
        drift_rms_hz=float(p["drift_rms_hz"]),
        tracking_error_rms_hz=float(p["tracking_error_rms_hz"]),
        seed=scenario.seed,
    )
    _save(report, out_dir, "feed_forward_trace.csv",
          np.column_stack([np.arange(study.n_steps), study.residual_trace_hz]), ("step", "residual_hz"))
    report.add_metric("max_abs_residual_hz", study.max_abs_residual_hz, "comblock", "Hz")
    report.add_metric("max_bound_excess_hz", study.max_bound_excess_hz, "comblock", "Hz")
    report.add_metric("within_bound", study.within_bound, "comblock")


# ---------------------------------------------------------------------
# Auxiliary locks
# ---------------------------------------------------------------------
def run_offset_lock(scenario: Scenario, out_dir: Path, report: RunReport) -> None:
    p = scenario.params
    lock = p["lock"]
    master = float(p["master_hz"])
    slaves = [deep_merge(p["slave_defaults"], slave) for slave in p["slaves"]]
    seeds = derive_seeds(scenario.seed, 2 * len(slaves))

    entries = []
    for index, slave in enumerate(slaves):
        p_gain, i_gain = normalized_gains(int(slave["prescaler_n"]), lock["detector_gain_v_per_hz"],
                                          lock["loop_gain"], lock["integral_ratio"])
        config = OffsetLockConfig(
            prescaler_n=int(slave["prescaler_n"]),
            f_dds_hz=float(slave["f_dds_hz"]),
            pd_bandwidth_hz=float(lock["pd_bandwidth_hz"]),
            p_gain=p_gain,
            i_gain=i_gain,
            sign=int(slave["sign"]),
            detector_gain_v_per_hz=float(lock["detector_gain_v_per_hz"]),
            detector_noise_rms_v=float(slave["detector_noise_rms_v"]),
            loop_rate_hz=float(lock["loop_rate_hz"]),
            piezo_bandwidth_hz=float(lock["piezo_bandwidth_hz"]),
            report_interval_s=float(lock["report_interval_s"]),
        )
        plant = BeatNotePlant(
            master_hz=master,
            slave_hz=master + config.sign * float(slave["initial_offset_hz"]),
            pd_bandwidth_hz=config.pd_bandwidth_hz,
            slave_white_fm_rms_hz=float(slave["white_fm_rms_hz"]),
            rng_seed=seeds[2 * index],
        )
        entries.append((plant, config, seeds[2 * index + 1]))

    retunes = [[(float(r["t_s"]), float(r["f_dds_hz"])) for r in p["retunes"] if int(r.get("slave", 0)) == index]
               for index in range(len(slaves))]
    trajectories = run_offset_locks(master, entries, _duration(scenario), retunes=retunes)

    for index, ((_, config, _), trajectory) in enumerate(zip(entries, trajectories)):
        label = f"slave{index}"
        _save(report, out_dir, f"{label}_trajectory.csv", trajectory.as_matrix(), trajectory.COLUMNS)
        _record_fault(report, label, trajectory)
        reported = trajectory.reported(config.report_interval_s)
        _save(report, out_dir, f"{label}_reported.csv", reported, ("t_s", "beat_error_hz"))

        beat_error = trajectory.column("beat_error_hz")
        tail = beat_error[-max(beat_error.size // 10, 1):] if beat_error.size else beat_error
        tolerance = config.prescaler_n * config.system_clock_hz / 2 ** 48
        report.add_metric(f"{label}_target_offset_hz",
                          float(trajectory.column("target_hz")[-1]) if len(trajectory) else math.nan,
                          "auxlocks", "Hz")
        report.add_metric(f"{label}_offset_error_hz", float(np.mean(tail)) if tail.size else math.nan,
                          "auxlocks", "Hz")
        report.add_metric(f"{label}_offset_tolerance_hz", tolerance, "auxlocks", "Hz")

        if not p["allan"]["enabled"]:
            continue
        try:
            series = FreqSeries.from_samples(reported)
            curve = allan_deviation(series, octave_taus(series))
            _save(report, out_dir, f"{label}_adev.csv",
                  np.column_stack([curve.taus_s, curve.adev, curve.stderr]), ("tau_s", "adev_hz", "stderr_hz"))
            slope = allan_slope(curve, p["allan"].get("tau_min_s"), p["allan"].get("tau_max_s"))
            report.add_metric(f"{label}_allan_slope", slope, "analysis.stability")
        except AnalysisError as e:
            logger.warning(f"{label}: Allan analysis skipped: {e}")


def _gate_end_errors(trajectory, setpoint_volts: float) -> np.ndarray:
    gate = trajectory.column("gate") > 0
    adc_v = trajectory.column("adc_v")
    ends = np.flatnonzero(gate & ~np.append(gate[1:], False))
    return np.abs(adc_v[ends[1:]] - setpoint_volts)


def _hold_violations(trajectory) -> int:
    gate = trajectory.column("gate") > 0
    amplitude = trajectory.column("dds_amplitude")
    held = ~gate[1:] & ~gate[:-1]
    return int(np.count_nonzero(held & (amplitude[1:] != amplitude[:-1])))


def run_intensity_lock(scenario: Scenario, out_dir: Path, report: RunReport) -> None:
    p = scenario.params
    lock = p["lock"]
    plant_seed, adc_seed = derive_seeds(scenario.seed, 2)
    config = IntensityLockConfig(
        pd_responsivity_v_per_w=float(lock["pd_responsivity_v_per_w"]),
        adc=_adc(p["adc"]),
        loop_rate_hz=float(lock["loop_rate_hz"]),
    )
    setpoint = float(lock["setpoint_volts"])
    amplitude = int(lock["initial_amplitude"])
    state = IntensityLockState(setpoint_volts=setpoint, dds_amplitude=amplitude, held_amplitude=amplitude)

    def fresh_plant() -> IntensityPlant:
        return IntensityPlant(**p["plant"], rng_seed=plant_seed)

    p_gain, i_gain = float(p["pi"]["p_gain"]), float(p["pi"]["i_gain"])
    if p["calibrate"]["enabled"]:
        p_gain, i_gain = calibrate_intensity_gains(
            fresh_plant(), config, setpoint, float(p["calibrate"]["target_slew_v_per_s"]),
            integral_ratio=float(p["calibrate"]["integral_ratio"]),
        )
    report.add_metric("p_gain", p_gain, "auxlocks")
    report.add_metric("i_gain", i_gain, "auxlocks")
    duration = _duration(scenario)

    lock_off = intensity_lock_run(fresh_plant(), state, GateSchedule.always_off(),
                                  PiController(p_gain=p_gain, i_gain=i_gain), duration,
                                  config=config, adc_seed=adc_seed)
    _save(report, out_dir, "lock_off.csv", lock_off.as_matrix(), lock_off.COLUMNS)
    _record_fault(report, "lock_off", lock_off)
    drift = np.diff(lock_off.column("adc_v"))
    report.add_metric("lock_off_drift_v", float(np.sum(drift)), "auxlocks", "V")
    report.add_metric("lock_off_monotone", bool(np.all(drift <= 0) or np.all(drift >= 0)), "auxlocks")
    report.add_metric("lock_off_amplitude_constant",
                      bool(np.all(lock_off.column("dds_amplitude") == amplitude)), "auxlocks")

    gate = p["gate"]
    gated = intensity_lock_run(fresh_plant(), state, GateSchedule.from_durations(gate["on_s"], gate["off_s"]),
                               PiController(p_gain=p_gain, i_gain=i_gain), duration,
                               config=config, adc_seed=adc_seed)
    _save(report, out_dir, "gated.csv", gated.as_matrix(), gated.COLUMNS)
    _record_fault(report, "gated", gated)
    errors = _gate_end_errors(gated, setpoint)
    report.add_metric("gate_end_error_v", float(np.max(errors)) if errors.size else math.nan, "auxlocks", "V")
    report.add_metric("hold_violations", _hold_violations(gated), "auxlocks")
    report.add_metric("saturated_steps", int(np.count_nonzero(gated.column("saturated"))), "auxlocks")


# ---------------------------------------------------------------------
# PID pipeline
# ---------------------------------------------------------------------
def _source(spec: Dict[str, Any], n_frames: int, rng: np.random.Generator):
    kind = spec["type"]
    amplitude, offset = float(spec["amplitude_v"]), float(spec["offset_v"])
    if kind == "none":
        return None
    if kind == "constant":
        return lambda t, frame: offset
    if kind == "sine":
        frequency = float(spec["frequency_hz"])
        return lambda t, frame: offset + amplitude * math.sin(2.0 * math.pi * frequency * t)
    if kind == "step":
        step_time = float(spec["step_time_s"])
        return lambda t, frame: offset + (amplitude if t >= step_time else 0.0)
    return rng.normal(offset, amplitude, size=n_frames)


def pipeline_matches_pi(raw_errors_v: Sequence[float], reference_hz: Sequence[float], p_gain: float,
                        i_gain: float, oversample_ratio: int, frame_rate_hz: float, start_hz: float) -> float:
    """
    Largest relative difference between a velocity-form pipeline channel and an
    incremental PI output trace.

    raw_errors_v holds oversample_ratio raw samples per entry of reference_hz,
    sampled at frame_rate_hz. i_gain is the incremental PI gain; the channel gets
    its integral gain from pipeline_integral_gain.

    Raises:
        AnalysisError: If the trace lengths disagree or the channel faults.
    """
    raw = np.asarray(raw_errors_v, dtype=float)
    reference = np.asarray(reference_hz, dtype=float)
    if reference.size == 0 or raw.size != reference.size * oversample_ratio:
        raise AnalysisError(f"Need {oversample_ratio} raw samples per reference output, "
                            f"got {raw.size} for {reference.size}.")

    channel = PidChannelConfig(p_gain=p_gain, i_gain=pipeline_integral_gain(i_gain, frame_rate_hz, oversample_ratio),
                               oversample_ratio=oversample_ratio, output_route="dds_frequency",
                               bounds=(0.0, 1.0e12), linear_transform=(1.0, start_hz), accumulate=True)
    log = PidPipeline([channel], frame_rate_hz=frame_rate_hz).run([raw], duration_s=raw.size / frame_rate_hz)[0]
    outputs = np.asarray(log.output_value)
    if outputs.size != reference.size:
        raise AnalysisError(f"Pipeline produced {outputs.size} outputs for {reference.size} PI steps"
                            + (f": {log.diagnostic}" if log.diagnostic else "."))
    return float(np.max(np.abs(outputs - reference) / np.abs(reference)))


def comb_lock_equivalence(config: CombLockConfig, p_gain: float, i_gain: float, duration_s: float,
                          step_hz: float, step_time_s: float, f_rep_hz: float = 76.0e6,
                          adc_seed: Optional[int] = None) -> float:
    """
    Run the comb lock through a repetition-rate step and replay its error trace
    through a pipeline channel at the lock's ADC rate and oversample ratio.

    Each averaged error is replayed as oversample_n raw samples. Returns the
    pipeline_matches_pi difference against the recorded f_0 trace.
    """
    trajectory = comb_lock_run(RepRatePlant(f_rep_hz=f_rep_hz), config,
                               PiController(p_gain=p_gain, i_gain=i_gain, output_hz=f_rep_hz), duration_s,
                               steps=[(step_time_s, step_hz)], adc_seed=adc_seed, strict=True)
    if trajectory.aborted:
        raise AnalysisError(f"Comb lock aborted before the comparison: {trajectory.diagnostic}")
    raw = np.repeat(trajectory.column("error_v"), config.oversample_n)
    return pipeline_matches_pi(raw, trajectory.column("f0_hz"), p_gain, i_gain, config.oversample_n,
                               config.sample_rate_hz, start_hz=f_rep_hz)


def run_pid_pipeline(scenario: Scenario, out_dir: Path, report: RunReport) -> None:
    p = scenario.params
    source_seed, adc_seed, equivalence_seed = derive_seeds(scenario.seed, 3)
    rng = np.random.default_rng(source_seed)
    frame_rate = float(p["frame_rate_hz"])
    duration = _duration(scenario)
    n_frames = int(round(duration * frame_rate))

    channels = [deep_merge(p["channel_defaults"], channel) for channel in p["channels"]]
    configs, sources = [], []
    for channel in channels:
        configs.append(PidChannelConfig(
            p_gain=float(channel["p_gain"]),
            i_gain=float(channel["i_gain"]),
            d_gain=float(channel["d_gain"]),
            oversample_ratio=int(channel["oversample_ratio"]),
            output_route=channel["output_route"],
            bounds=tuple(float(b) for b in channel["bounds"]),
            linear_transform=tuple(float(c) for c in channel["linear_transform"]),
            enabled=bool(channel["enabled"]),
            accumulate=bool(channel["accumulate"]),
        ))
        sources.append(_source(channel["source"], n_frames, rng))

    adc = _adc(p["adc"]) if p["adc"]["enabled"] else None
    logs = pipeline_run(configs, sources, duration, frame_rate_hz=frame_rate, adc=adc, adc_seed=adc_seed)
    for log, config in zip(logs, configs):
        if not config.enabled:
            continue
        label = f"channel{log.channel}"
        _save(report, out_dir, f"{label}.csv", log.as_matrix(), ("t_s", "error_v", "output"))
        routed = np.asarray(log.routed, dtype=float).reshape(-1, 2)
        _save(report, out_dir, f"{label}_routed.csv", routed, ("t_s", "value"))
        intervals = np.diff(routed[:, 0])
        min_interval = float(intervals.min()) if intervals.size else math.inf
        report.add_metric(f"{label}_outputs", len(log.output_value), "pidpipe")
        report.add_metric(f"{label}_final_output", log.output_value[-1] if log.output_value else math.nan, "pidpipe")
        report.add_metric(f"{label}_dropped_updates", log.dropped_updates, "pidpipe")
        report.add_metric(f"{label}_rate_cap_ok", min_interval >= (1.0 / config.rate_cap_hz) * (1.0 - 1e-9),
                          "pidpipe")
        report.add_metric(f"{label}_faulted", log.diagnostic is not None, "pidpipe")

    equivalence = p["comb_equivalence"]
    if equivalence["enabled"]:
        report.add_metric(
            "comb_equivalence_max_rel_error",
            comb_lock_equivalence(
                CombLockConfig(sample_rate_hz=float(equivalence["sample_rate_hz"]),
                               oversample_n=int(equivalence["oversample_n"])),
                float(equivalence["p_gain"]), float(equivalence["i_gain"]), float(equivalence["duration_s"]),
                float(equivalence["step_hz"]), float(equivalence["step_time_s"]), adc_seed=equivalence_seed,
            ),
            "pidpipe",
        )


# ---------------------------------------------------------------------
# DAC
# ---------------------------------------------------------------------
def _program(p: Dict[str, Any], mode: str, scenario: Scenario):
    if p.get("program_file"):
        path = Path(p["program_file"])
        if not path.is_absolute() and scenario.source_path:
            path = Path(scenario.source_path).parent / path
        return load_program_file(path, p["steps"], float(p["update_rate_hz"]), mode)
    sets = [VoltageSet.from_voltages([s["uniform_v"]] * NUM_DAC_CHANNELS) if "uniform_v" in s
            else VoltageSet.from_voltages(s["voltages"]) for s in p["sets"]]
    return load_program(sets, p["steps"], float(p["update_rate_hz"]), mode)


def _harmonics_found(peaks: np.ndarray, rate_hz: float, count: int, resolution_hz: float) -> int:
    found = 0
    for k in range(1, count + 1):
        if peaks.size and np.min(np.abs(peaks - k * rate_hz)) <= resolution_hz:
            found += 1
    return found


def run_dac(scenario: Scenario, out_dir: Path, report: RunReport) -> None:
    """
    Both modes are analyzed over the same window, which starts once the program
    stream has been emitted and has settled.
    """
    p = scenario.params
    timing = DacTimingSpec(**p["timing"])
    noise = DacNoiseSpec(**p["noise"])
    sim_rate = float(p["sim_rate_hz"])
    rate = float(p["update_rate_hz"])
    band = [float(f) for f in p["band_hz"]]
    segment = int(p["psd"]["segment_length"])
    overlap = float(p["psd"]["overlap"])
    chain = FilterChain.default_dac_chain() if p["filter"]["enabled"] else None
    report.add_metric("lsb_volts", DAC_LSB_VOLTS, "dacsim", "V")

    powers: Dict[str, float] = {}
    for mode, seed in zip(p["modes"], derive_seeds(scenario.seed, len(p["modes"]))):
        program = _program(p, mode, scenario)
        run = run_sequence(program, timing, _duration(scenario), sim_rate, channels=p["channels"],
                           noise=noise, seed=seed)
        save_jsonl(run.events, out_dir / f"{mode}_events.jsonl")
        report.artifacts.append(f"{mode}_events.jsonl")

        raw = run.waveform(run.channels[0])
        filtered = apply_filter_chain(raw, sim_rate, chain) if chain is not None else raw
        start = int(math.ceil((len(expand_program(program)) / rate + 20.0 * timing.settle_tau_s) * sim_rate))
        raw_spectrum = psd_estimate(raw[start:], sim_rate, segment, overlap)
        filtered_spectrum = psd_estimate(filtered[start:], sim_rate, segment, overlap)
        _save(report, out_dir, f"{mode}_waveform.csv", np.column_stack([run.t_s, raw, filtered]),
              ("t_s", "raw_v", "filtered_v"))
        _save(report, out_dir, f"{mode}_psd.csv",
              np.column_stack([raw_spectrum.freqs_hz, raw_spectrum.psd, filtered_spectrum.psd]),
              ("freq_hz", "psd_raw_v2_per_hz", "psd_filtered_v2_per_hz"))

        powers[mode] = band_power(filtered_spectrum, band[0], band[1])
        peaks = find_peaks(raw_spectrum, prominence_db=10.0, f_min_hz=0.5 * rate)
        report.add_metric(f"{mode}_band_power_v2", powers[mode], "analysis.spectral", "V^2")
        report.add_metric(f"{mode}_harmonic_peaks",
                          _harmonics_found(peaks, rate, int(p["harmonics"]), raw_spectrum.resolution_hz),
                          "analysis.spectral")
        report.add_metric(f"{mode}_updates", len(run.events), "dacsim")
        report.add_metric(f"{mode}_overruns", sum(event["overrun"] for event in run.events), "dacsim")

    if "synchronous" in powers and "asynchronous" in powers and powers["asynchronous"] > 0:
        report.add_metric("band_power_ratio_db", 10.0 * math.log10(powers["synchronous"] / powers["asynchronous"]),
                          "analysis.spectral", "dB")


# ---------------------------------------------------------------------
# Coherence
# ---------------------------------------------------------------------
def run_coherence(scenario: Scenario, out_dir: Path, report: RunReport) -> None:
    p = scenario.params
    sigma = float(p["sigma_hz"])
    source = StaticGaussianDetuning(sigma_hz=sigma)
    rng = np.random.default_rng(scenario.seed)
    n_trials = int(p["n_trials"])
    fringe_points = int(p["fringe_points"])
    analysis_phases = np.linspace(0.0, 2.0 * math.pi, fringe_points, endpoint=False)

    rows, points = [], []
    for tau in p["taus_s"]:
        visibility = ramsey_visibility(source, float(tau), n_trials, rng)
        contrast = ramsey_fringe_contrast(source.phases(float(tau), n_trials, rng), analysis_phases) \
            if fringe_points >= 3 else math.nan
        points.append((float(tau), visibility))
        rows.append((float(tau), visibility, contrast))
    _save(report, out_dir, "visibility.csv", np.asarray(rows), ("tau_s", "visibility", "fringe_contrast"))

    fit = fit_gaussian_coherence(points)
    report.add_metric("coherence_alpha_s", fit.coherence_time_alpha_s, "analysis.coherence", "s")
    report.add_metric("coherence_alpha_stderr_s", fit.alpha_stderr, "analysis.coherence", "s")
    report.add_metric("coherence_amplitude", fit.amplitude, "analysis.coherence")
    if sigma > 0:
        expected = gaussian_alpha_for_sigma(sigma)
        report.add_metric("expected_alpha_s", expected, "analysis.coherence", "s")
        report.add_metric("alpha_relative_error", abs(fit.coherence_time_alpha_s - expected) / expected,
                          "analysis.coherence")


SCENARIO_RUNNERS: Dict[str, Runner] = {
    "comb_lock": run_comb_lock,
    "comb_calibration": run_comb_calibration,
    "averaging": run_averaging,
    "feed_forward": run_feed_forward,
    "offset_lock": run_offset_lock,
    "intensity_lock": run_intensity_lock,
    "pid_pipeline": run_pid_pipeline,
    "dac": run_dac,
    "coherence": run_coherence,
}
