"""Stream scenarios through framing and filters, collect metric traces.

The emitted error signal is aligned to the input timeline before any
metric is computed: OLS output chunks already coincide with their input
chunks, while naively concatenated OLA chunks lag by K - R samples and
are shifted back (the algorithmic delay itself is a real-time latency,
not an array offset).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics as metrics_mod
from .audio_io import (
    FILTER_FDKF,
    FILTER_FDKF_FDNLMS,
    FILTER_FDKF_VSS,
    FILTER_NLMS,
    FILTER_ORACLE_FDKF,
    ExperimentConfig,
    InputFiles,
    MetricsConfig,
    read_wav,
)
from .echosim import Scenario, build_scenario
from .errors import ConfigurationError
from .filters import Fdkf, FdkfParams, FdNlmsGainLaw, Nlms, VssGainLaw
from .framing import AnalysisStream, FrameConfig, make_synthesis_stream
from .metrics import ErleConfig


@dataclass
class FilterRun:
    """Outcome of one filter over one scenario."""

    name: str
    error: np.ndarray
    echo_estimate: np.ndarray
    erle_trace: np.ndarray
    erle_sections: list
    misalignment_trace: np.ndarray | None
    misalignment_sections: list | None
    misalignment_truncated: bool
    log_mse: float
    diagnostics: dict = field(default_factory=dict)


def scenario_from_files(inputs: InputFiles, sample_rate: int) -> Scenario:
    """Assemble a scenario-shaped bundle from user-supplied WAV files.

    Missing ground-truth components default to zeros; the whole signal is
    treated as one double-talk section for aggregation purposes.
    """
    reference = read_wav(inputs.reference, expected_rate=sample_rate).samples
    microphone = read_wav(inputs.microphone, expected_rate=sample_rate).samples
    n = min(len(reference), len(microphone))
    reference = reference[:n]
    microphone = microphone[:n]

    def _component(path):
        if path is None:
            return None
        return read_wav(path, expected_rate=sample_rate).samples[:n]

    echo = _component(inputs.echo)
    near = _component(inputs.near_speech)
    noise = _component(inputs.noise)
    zeros = np.zeros(n)
    return Scenario(
        reference=reference,
        loudspeaker=reference.copy(),
        echo=echo if echo is not None else microphone.copy(),
        near_speech=near if near is not None else zeros.copy(),
        noise=noise if noise is not None else zeros.copy(),
        microphone=microphone,
        rirs=[],
        sections=[("dt", 0, n)],
        sample_rate=sample_rate,
        spec=None,
    )


def _chunked(signal: np.ndarray, shift: int):
    full = len(signal) // shift
    for index in range(full):
        yield signal[index * shift : (index + 1) * shift]


def run_fdkf(
    scenario: Scenario,
    frame_config: FrameConfig,
    params: FdkfParams | None = None,
    gain_law=None,
    oracle: bool = False,
    transition_schedule=None,
    track_misalignment: bool = True,
):
    """Stream one scenario through an FDKF-family filter.

    Returns ``(error_signal, misalignment_trace, truncated, diagnostics)``
    where the misalignment trace holds one value per processed frame
    (``None`` when tracking is disabled or no echo-path truth exists).
    ``transition_schedule`` may be a callable mapping the frame index to a
    per-frame state-transition factor.
    """
    if params is None:
        params = FdkfParams.for_frames(frame_config)
    if params.taps != frame_config.taps:
        raise ConfigurationError(
            "filter tap count differs from the framing tap count"
        )
    if oracle and scenario.spec is None and not len(scenario.rirs):
        # file-based scenarios carry truth only if an echo file was given
        pass

    shift = frame_config.frame_shift
    total = len(scenario.microphone)
    n_chunks = total // shift
    usable = n_chunks * shift

    x_stream = AnalysisStream(frame_config, origin="reference")
    y_stream = AnalysisStream(frame_config, origin="microphone")
    d_stream = AnalysisStream(frame_config, origin="echo") if oracle else None
    synthesis = make_synthesis_stream(frame_config)
    fdkf = Fdkf(frame_config.dft_size, params=params, gain_law=gain_law)

    have_truth = track_misalignment and len(scenario.rirs) > 0
    mis_values = [] if have_truth else None
    truncated = False

    flush_chunks = math.ceil(frame_config.synthesis_lag / shift)
    emitted = np.empty((n_chunks + flush_chunks) * shift)
    zeros = np.zeros(shift)

    for index in range(n_chunks + flush_chunks):
        if index < n_chunks:
            x_chunk = scenario.reference[index * shift : (index + 1) * shift]
            y_chunk = scenario.microphone[index * shift : (index + 1) * shift]
            d_chunk = scenario.echo[index * shift : (index + 1) * shift]
        else:
            x_chunk = y_chunk = d_chunk = zeros
        x_frame = x_stream.step(x_chunk)
        y_frame = y_stream.step(y_chunk)
        truth = d_stream.step(d_chunk) if d_stream is not None else None
        transition = (
            transition_schedule(index) if transition_schedule is not None else None
        )
        error_bins, _ = fdkf.step(
            y_frame, x_frame, transition=transition, echo_truth=truth
        )
        emitted[index * shift : (index + 1) * shift] = synthesis.step(error_bins)
        if mis_values is not None and index < n_chunks:
            sample = min((index + 1) * shift - 1, total - 1)
            value, was_truncated = metrics_mod.misalignment(
                scenario.rir_at(sample), fdkf.state.filter_taps, frame_config
            )
            mis_values.append(value)
            truncated = truncated or was_truncated

    lag = frame_config.synthesis_lag
    error = emitted[lag : lag + usable]
    diagnostics = {
        "frames": n_chunks,
        "covariance_clamps": fdkf.state.covariance_clamps,
        "asymmetry_warnings": synthesis.asymmetry_warnings,
        "algorithmic_delay": frame_config.algorithmic_delay,
        "alignment_shift": lag,
    }
    trace = np.asarray(mis_values) if mis_values is not None else None
    return error, trace, truncated, diagnostics


def run_nlms(
    scenario: Scenario,
    length: int,
    stepsize: float = 1.0,
    regularization: float = 1e-6,
    snapshot_every: int | None = None,
    track_misalignment: bool = True,
):
    """Run the sample-wise NLMS baseline over one scenario."""
    nlms = Nlms(length, stepsize=stepsize, regularization=regularization)
    have_truth = track_misalignment and len(scenario.rirs) > 0
    hop = snapshot_every if snapshot_every else length
    error, snapshots = nlms.run(
        scenario.reference, scenario.microphone, snapshot_every=hop
    )
    trace = None
    truncated = False
    if have_truth:
        values = []
        for index, weights in enumerate(snapshots):
            sample = min((index + 1) * hop - 1, len(error) - 1)
            truth = scenario.rir_at(sample)
            if len(truth) > len(weights):
                truncated = True
                truth = truth[: len(weights)]
            values.append(metrics_mod.misalignment_db(truth, weights))
        trace = np.asarray(values)
    diagnostics = {
        "samples": len(error),
        "algorithmic_delay": 0,
        "alignment_shift": 0,
        "snapshot_every": hop,
    }
    return error, trace, truncated, diagnostics


def _sections_scaled(sections, divisor: int, limit: int):
    scaled = []
    for kind, start, stop in sections:
        scaled.append((kind, start // divisor, min(stop // divisor, limit)))
    return scaled


def evaluate(
    name: str,
    scenario: Scenario,
    error: np.ndarray,
    metrics_config: MetricsConfig | None = None,
    misalignment_trace=None,
    misalignment_hop: int | None = None,
    misalignment_truncated: bool = False,
    diagnostics: dict | None = None,
) -> FilterRun:
    """Compute the metric bundle for one filter's emitted error signal."""
    cfg = metrics_config if metrics_config is not None else MetricsConfig()
    n = len(error)
    fs = scenario.sample_rate
    echo_estimate = scenario.microphone[:n] - error
    erle_cfg = ErleConfig(smoothing=cfg.erle_smoothing, cap_db=cfg.erle_cap_db)
    erle_trace = metrics_mod.erle(scenario.echo[:n], echo_estimate, erle_cfg)
    sections = [(k, s, min(e, n)) for k, s, e in scenario.sections if s < n]
    erle_sections = metrics_mod.aggregate_sections(
        erle_trace,
        sections,
        rate=fs,
        warmup=cfg.warmup_seconds,
        final_window=cfg.final_window_seconds,
    )
    mis_sections = None
    trace = None
    if misalignment_trace is not None and misalignment_hop:
        trace = np.asarray(misalignment_trace)
        frame_sections = _sections_scaled(sections, misalignment_hop, len(trace))
        mis_sections = metrics_mod.aggregate_sections(
            trace,
            frame_sections,
            rate=fs / misalignment_hop,
            warmup=cfg.warmup_seconds,
            final_window=cfg.final_window_seconds,
        )
    value = metrics_mod.log_mse(
        error, scenario.near_speech[:n], scenario.noise[:n]
    )
    return FilterRun(
        name=name,
        error=error,
        echo_estimate=echo_estimate,
        erle_trace=erle_trace,
        erle_sections=erle_sections,
        misalignment_trace=trace,
        misalignment_sections=mis_sections,
        misalignment_truncated=misalignment_truncated,
        log_mse=value,
        diagnostics=diagnostics or {},
    )


def run_filter(name: str, config: ExperimentConfig, scenario: Scenario) -> FilterRun:
    """Run one named filter from an experiment config over a scenario."""
    frame = config.frame
    if name in (FILTER_FDKF, FILTER_ORACLE_FDKF, FILTER_FDKF_FDNLMS, FILTER_FDKF_VSS):
        gain_law = None
        if name == FILTER_FDKF_FDNLMS:
            gain_law = FdNlmsGainLaw(
                stepsize=config.gain_laws.fd_nlms_stepsize,
                regularization=config.gain_laws.fd_nlms_regularization,
            )
        elif name == FILTER_FDKF_VSS:
            gain_law = VssGainLaw(
                mu_factor=config.gain_laws.vss_mu_factor,
                err_factor=config.gain_laws.vss_err_factor,
                forgetting=config.gain_laws.vss_forgetting,
                floor=config.gain_laws.vss_floor,
            )
        oracle = name == FILTER_ORACLE_FDKF
        if oracle and scenario.spec is None and config.inputs is not None:
            if config.inputs.echo is None:
                raise ConfigurationError(
                    "oracle_fdkf needs ground-truth echo (inputs.echo)"
                )
        error, trace, truncated, diagnostics = run_fdkf(
            scenario,
            frame,
            params=config.fdkf,
            gain_law=gain_law,
            oracle=oracle,
        )
        return evaluate(
            name,
            scenario,
            error,
            config.metrics,
            misalignment_trace=trace,
            misalignment_hop=frame.frame_shift,
            misalignment_truncated=truncated,
            diagnostics=diagnostics,
        )
    if name == FILTER_NLMS:
        length = config.nlms.length or frame.model_length
        error, trace, truncated, diagnostics = run_nlms(
            scenario,
            length,
            stepsize=config.nlms.stepsize,
            regularization=config.nlms.regularization,
            snapshot_every=frame.frame_shift,
        )
        return evaluate(
            name,
            scenario,
            error,
            config.metrics,
            misalignment_trace=trace,
            misalignment_hop=frame.frame_shift,
            misalignment_truncated=truncated,
            diagnostics=diagnostics,
        )
    raise ConfigurationError(f"unknown filter {name!r}")


def make_scenario(config: ExperimentConfig, seed: int | None = None) -> Scenario:
    """Build or load the scenario described by an experiment config."""
    if config.inputs is not None:
        return scenario_from_files(config.inputs, config.frame.sample_rate)
    spec = config.scenario
    if seed is not None and seed != spec.seed:
        import dataclasses

        spec = dataclasses.replace(spec, seed=seed)
    return build_scenario(spec)
