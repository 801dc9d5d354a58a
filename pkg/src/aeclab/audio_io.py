"""Deterministic file I/O: mono WAV read/write and experiment configs.

WAV support covers 16-bit PCM and 32-bit IEEE float, mono (the first
channel of multichannel files is taken with a warning). There is no
resampling: a sample-rate mismatch against an expected rate is an error.

Experiment configs are YAML with strict key checking; an empty file
materializes the full default configuration.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy.io import wavfile

from .echosim import (
    NonlinearitySpec,
    RirSpec,
    ScenarioSpec,
    SectionSpec,
    SigmoidParams,
    SourceSpec,
)
from .errors import ConfigurationError
from .filters import FdkfParams
from .framing import (
    MODE_OLA,
    MODE_OLS,
    WINDOW_RECT,
    WINDOW_SQRT_HANN,
    FrameConfig,
)

PCM16_SCALE = 32768.0


@dataclass
class AudioBuffer:
    """Mono audio samples (float, nominal range [-1, 1]) plus sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1:
            raise ConfigurationError("audio buffers are mono (1-D)")
        if len(self.samples) and not np.all(np.isfinite(self.samples)):
            raise ConfigurationError("audio samples must be finite")


def read_wav(path, expected_rate: int | None = None) -> AudioBuffer:
    """Read a PCM16 or float32 WAV file into a normalized mono buffer."""
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ConfigurationError(f"cannot read WAV file {path}: {exc}") from exc
    if data.ndim == 2:
        warnings.warn(
            f"{path}: multichannel file, taking the first channel", stacklevel=2
        )
        data = data[:, 0]
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ConfigurationError(
            f"{path}: unsupported sample encoding {data.dtype}"
        )
    if expected_rate is not None and rate != expected_rate:
        raise ConfigurationError(
            f"{path}: sample rate {rate} Hz does not match the expected "
            f"{expected_rate} Hz (no resampling)"
        )
    return AudioBuffer(samples, int(rate))


def write_wav(buffer: AudioBuffer, path, bit_depth: int = 32) -> int:
    """Write a buffer as RIFF/WAVE; returns the number of clipped samples.

    Samples beyond full scale are saturated. 32-bit float output is the
    default so that round trips of float32-representable data are
    lossless.
    """
    samples = np.asarray(buffer.samples, dtype=np.float64)
    if len(samples) and not np.all(np.isfinite(samples)):
        raise ConfigurationError("refusing to write non-finite samples")
    clipped = int(np.count_nonzero(np.abs(samples) > 1.0))
    if bit_depth == 32:
        data = np.clip(samples, -1.0, 1.0).astype(np.float32)
    elif bit_depth == 16:
        # symmetric saturation keeps +/- full scale at the same magnitude
        scaled = np.round(samples * PCM16_SCALE)
        data = np.clip(scaled, -(PCM16_SCALE - 1.0), PCM16_SCALE - 1.0).astype(np.int16)
    else:
        raise ConfigurationError(f"unsupported bit depth {bit_depth}")
    wavfile.write(path, int(buffer.sample_rate), data)
    return clipped


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

FILTER_FDKF = "fdkf"
FILTER_ORACLE_FDKF = "oracle_fdkf"
FILTER_NLMS = "nlms"
FILTER_FDKF_FDNLMS = "fdkf_fdnlms"
FILTER_FDKF_VSS = "fdkf_vss"
KNOWN_FILTERS = (
    FILTER_FDKF,
    FILTER_ORACLE_FDKF,
    FILTER_NLMS,
    FILTER_FDKF_FDNLMS,
    FILTER_FDKF_VSS,
)

#: Framing presets: multi-tap OLA, and single-/two-tap OLS variants with
#: matched effective reference input length M = 1408.
FRAME_PRESETS = {
    (MODE_OLA, None): dict(dft_size=512, frame_shift=128, taps=8, window=WINDOW_SQRT_HANN),
    (MODE_OLA, 8): dict(dft_size=512, frame_shift=128, taps=8, window=WINDOW_SQRT_HANN),
    (MODE_OLS, None): dict(dft_size=1408, frame_shift=512, taps=1, window=WINDOW_RECT),
    (MODE_OLS, 1): dict(dft_size=1408, frame_shift=512, taps=1, window=WINDOW_RECT),
    (MODE_OLS, 2): dict(dft_size=896, frame_shift=512, taps=2, window=WINDOW_RECT),
}


def default_frame_config(
    mode: str = MODE_OLA, taps: int | None = None, sample_rate: int = 16000
) -> FrameConfig:
    """Framing defaults for the standard mode/tap combinations."""
    try:
        preset = FRAME_PRESETS[(mode, taps)]
    except KeyError:
        raise ConfigurationError(
            f"no framing preset for mode={mode!r}, taps={taps}; specify "
            "dft_size and frame_shift explicitly"
        ) from None
    return FrameConfig(mode=mode, sample_rate=sample_rate, **preset)


@dataclass
class NlmsConfig:
    """Time-domain NLMS baseline settings; ``length=None`` adopts the
    modelled echo-path length of the framing config."""

    length: int | None = None
    stepsize: float = 1.0
    regularization: float = 1e-6


@dataclass
class GainLawConfig:
    """Parameters of the pluggable alternative gain laws."""

    fd_nlms_stepsize: float = 1.0
    fd_nlms_regularization: float = 0.0
    vss_mu_factor: float = 1.0
    vss_err_factor: float = 1.0
    vss_forgetting: float = 0.9
    vss_floor: float = 1e-3


@dataclass
class MetricsConfig:
    erle_smoothing: float = 0.99
    erle_cap_db: float = 120.0
    warmup_seconds: float = 0.25
    final_window_seconds: float = 1.0


@dataclass
class InputFiles:
    """File-based scenario: reference and microphone WAVs plus optional
    ground-truth components."""

    reference: str
    microphone: str
    echo: str | None = None
    near_speech: str | None = None
    noise: str | None = None


@dataclass
class ExperimentConfig:
    """Validated, fully materialized description of one experiment run."""

    frame: FrameConfig
    fdkf: FdkfParams
    nlms: NlmsConfig
    gain_laws: GainLawConfig
    metrics: MetricsConfig
    filters: list
    scenario: ScenarioSpec | None
    inputs: InputFiles | None
    seed: int = 0
    out_dir: str = "runs"
    save_scenario: bool = False

    def __post_init__(self):
        for name in self.filters:
            if name not in KNOWN_FILTERS:
                raise ConfigurationError(
                    f"unknown filter {name!r}; known: {', '.join(KNOWN_FILTERS)}"
                )
        if self.scenario is None and self.inputs is None:
            raise ConfigurationError(
                "configuration needs either a scenario or input files"
            )
        if self.scenario is not None and self.inputs is not None:
            raise ConfigurationError(
                "scenario and input files are mutually exclusive"
            )
        if self.scenario is not None and self.scenario.sample_rate != self.frame.sample_rate:
            raise ConfigurationError(
                "scenario sample rate differs from the framing sample rate"
            )


def _take(mapping: dict, key: str, default):
    return mapping.pop(key, default)


def _reject_unknown(mapping: dict, context: str):
    if mapping:
        raise ConfigurationError(
            f"unknown key(s) in {context}: {', '.join(sorted(map(str, mapping)))}"
        )


def _parse_frame(raw: dict | None, sample_rate: int) -> FrameConfig:
    raw = dict(raw or {})
    mode = _take(raw, "mode", MODE_OLA)
    taps = _take(raw, "taps", None)
    dft_size = _take(raw, "dft_size", None)
    frame_shift = _take(raw, "frame_shift", None)
    window = _take(raw, "window", None)
    sample_rate = _take(raw, "sample_rate", sample_rate)
    _reject_unknown(raw, "frame")
    if dft_size is None and frame_shift is None:
        base = default_frame_config(mode, taps, sample_rate)
        if window is not None and window != base.window:
            return FrameConfig(
                dft_size=base.dft_size,
                frame_shift=base.frame_shift,
                taps=base.taps,
                mode=mode,
                window=window,
                sample_rate=sample_rate,
            )
        return base
    if dft_size is None or frame_shift is None:
        raise ConfigurationError(
            "frame: dft_size and frame_shift must be given together"
        )
    if window is None:
        window = WINDOW_RECT if mode == MODE_OLS else WINDOW_SQRT_HANN
    return FrameConfig(
        dft_size=int(dft_size),
        frame_shift=int(frame_shift),
        taps=int(taps) if taps is not None else 1,
        mode=mode,
        window=window,
        sample_rate=int(sample_rate),
    )


def _parse_fdkf(raw: dict | None, frame: FrameConfig) -> FdkfParams:
    raw = dict(raw or {})
    kwargs = {}
    for key in ("state_transition", "smoothing", "initial_p", "regularization"):
        if key in raw:
            kwargs[key] = raw.pop(key)
    _reject_unknown(raw, "fdkf")
    return FdkfParams.for_frames(frame, **kwargs)


def _parse_nlms(raw: dict | None) -> NlmsConfig:
    raw = dict(raw or {})
    cfg = NlmsConfig(
        length=_take(raw, "length", None),
        stepsize=float(_take(raw, "stepsize", 1.0)),
        regularization=float(_take(raw, "regularization", 1e-6)),
    )
    _reject_unknown(raw, "nlms")
    return cfg


def _parse_gain_laws(raw: dict | None) -> GainLawConfig:
    raw = dict(raw or {})
    fd = dict(_take(raw, "fd_nlms", {}) or {})
    vss = dict(_take(raw, "vss", {}) or {})
    _reject_unknown(raw, "gain_laws")
    cfg = GainLawConfig(
        fd_nlms_stepsize=float(_take(fd, "stepsize", 1.0)),
        fd_nlms_regularization=float(_take(fd, "regularization", 0.0)),
        vss_mu_factor=float(_take(vss, "mu_factor", 1.0)),
        vss_err_factor=float(_take(vss, "err_factor", 1.0)),
        vss_forgetting=float(_take(vss, "forgetting", 0.9)),
        vss_floor=float(_take(vss, "floor", 1e-3)),
    )
    _reject_unknown(fd, "gain_laws.fd_nlms")
    _reject_unknown(vss, "gain_laws.vss")
    return cfg


def _parse_metrics(raw: dict | None) -> MetricsConfig:
    raw = dict(raw or {})
    cfg = MetricsConfig(
        erle_smoothing=float(_take(raw, "erle_smoothing", 0.99)),
        erle_cap_db=float(_take(raw, "erle_cap_db", 120.0)),
        warmup_seconds=float(_take(raw, "warmup_seconds", 0.25)),
        final_window_seconds=float(_take(raw, "final_window_seconds", 1.0)),
    )
    _reject_unknown(raw, "metrics")
    return cfg


def _parse_nonlinearity(raw: dict | None) -> NonlinearitySpec:
    raw = dict(raw or {})
    kind = _take(raw, "kind", "none")
    sef_alpha = float(_take(raw, "sef_alpha", 1.0))
    sigmoid_raw = dict(_take(raw, "sigmoid", {}) or {})
    _reject_unknown(raw, "scenario.nonlinearity")
    sigmoid = SigmoidParams(
        gain=float(_take(sigmoid_raw, "gain", 1.0)),
        slope_pos=float(_take(sigmoid_raw, "slope_pos", 4.0)),
        slope_neg=float(_take(sigmoid_raw, "slope_neg", 0.5)),
        c1=float(_take(sigmoid_raw, "c1", 1.5)),
        c2=float(_take(sigmoid_raw, "c2", -0.3)),
    )
    _reject_unknown(sigmoid_raw, "scenario.nonlinearity.sigmoid")
    return NonlinearitySpec(kind=kind, sef_alpha=sef_alpha, sigmoid=sigmoid)


def _parse_source(raw, context: str) -> SourceSpec:
    if raw is None:
        return SourceSpec()
    if isinstance(raw, str):
        if raw.endswith(".wav"):
            return SourceSpec("wav", raw)
        return SourceSpec(raw)
    raw = dict(raw)
    spec = SourceSpec(
        kind=_take(raw, "kind", "wgn"), path=_take(raw, "path", None)
    )
    _reject_unknown(raw, context)
    return spec


def _parse_rir_entry(raw: dict, sample_rate: int, context: str):
    raw = dict(raw)
    time_s = float(_take(raw, "time", 0.0))
    spec = RirSpec(
        rt60=float(_take(raw, "rt60", 0.2)),
        length=_take(raw, "length", None),
        sample_rate=sample_rate,
        seed=_take(raw, "seed", None),
        allow_extended=bool(_take(raw, "allow_extended", False)),
    )
    _reject_unknown(raw, context)
    return time_s, spec


def _parse_scenario(raw: dict | None, seed: int, sample_rate: int) -> ScenarioSpec | None:
    if raw is None:
        return None
    raw = dict(raw)
    sections_raw = _take(raw, "sections", None)
    sections = ()
    if sections_raw is not None:
        parsed = []
        for entry in sections_raw:
            entry = dict(entry)
            parsed.append(
                SectionSpec(
                    kind=_take(entry, "kind", "stfe"),
                    duration=float(_take(entry, "duration", 8.0)),
                )
            )
            _reject_unknown(entry, "scenario.sections[]")
        sections = tuple(parsed)
    rir_raw = _take(raw, "rir", None)
    schedule = ()
    if rir_raw is not None:
        if isinstance(rir_raw, dict):
            rir_raw = [dict(rir_raw, time=0.0)]
        schedule = tuple(
            _parse_rir_entry(entry, sample_rate, "scenario.rir[]")
            for entry in rir_raw
        )
    snr = _take(raw, "snr_db", 20.0)
    spec = ScenarioSpec(
        sections=sections,
        ser_db=float(_take(raw, "ser_db", 0.0)),
        snr_db=None if snr is None else float(snr),
        rir_schedule=schedule,
        nonlinearity=_parse_nonlinearity(_take(raw, "nonlinearity", None)),
        far_source=_parse_source(_take(raw, "far_source", None), "scenario.far_source"),
        near_source=_parse_source(
            _take(raw, "near_source", {"kind": "speech"}), "scenario.near_source"
        ),
        seed=int(_take(raw, "seed", seed)),
        sample_rate=sample_rate,
    )
    _reject_unknown(raw, "scenario")
    return spec


def _parse_inputs(raw: dict | None) -> InputFiles | None:
    if raw is None:
        return None
    raw = dict(raw)
    try:
        inputs = InputFiles(
            reference=raw.pop("reference"),
            microphone=raw.pop("microphone"),
            echo=_take(raw, "echo", None),
            near_speech=_take(raw, "near_speech", None),
            noise=_take(raw, "noise", None),
        )
    except KeyError as exc:
        raise ConfigurationError(f"inputs: missing required key {exc}") from None
    _reject_unknown(raw, "inputs")
    return inputs


def config_from_dict(raw: dict | None) -> ExperimentConfig:
    """Build a validated ExperimentConfig from a plain mapping."""
    raw = copy.deepcopy(raw) if raw else {}
    if not isinstance(raw, dict):
        raise ConfigurationError("configuration root must be a mapping")
    seed = int(_take(raw, "seed", 0))
    sample_rate = int(_take(raw, "sample_rate", 16000))
    frame = _parse_frame(_take(raw, "frame", None), sample_rate)
    fdkf = _parse_fdkf(_take(raw, "fdkf", None), frame)
    nlms = _parse_nlms(_take(raw, "nlms", None))
    gain_laws = _parse_gain_laws(_take(raw, "gain_laws", None))
    metrics_cfg = _parse_metrics(_take(raw, "metrics", None))
    filters = list(_take(raw, "filters", [FILTER_FDKF, FILTER_NLMS]))
    inputs = _parse_inputs(_take(raw, "inputs", None))
    scenario_raw = _take(raw, "scenario", None)
    if scenario_raw is None and inputs is None:
        scenario_raw = {}
    scenario = _parse_scenario(scenario_raw, seed, frame.sample_rate)
    out_dir = str(_take(raw, "out_dir", "runs"))
    save_scenario = bool(_take(raw, "save_scenario", False))
    _reject_unknown(raw, "configuration")
    return ExperimentConfig(
        frame=frame,
        fdkf=fdkf,
        nlms=nlms,
        gain_laws=gain_laws,
        metrics=metrics_cfg,
        filters=filters,
        scenario=scenario,
        inputs=inputs,
        seed=seed,
        out_dir=out_dir,
        save_scenario=save_scenario,
    )


def load_config(path) -> ExperimentConfig:
    """Load and validate a YAML experiment config; empty files yield the
    full default configuration."""
    with open(path, "r", encoding="utf-8") as handle:
        raw = yaml.safe_load(handle)
    if raw is None:
        raw = {}
    return config_from_dict(raw)


def config_to_dict(config: ExperimentConfig) -> dict:
    """Materialize a config (defaults included) as a plain mapping that
    reloads to an identical configuration."""
    frame = config.frame
    out = {
        "seed": config.seed,
        "sample_rate": frame.sample_rate,
        "out_dir": config.out_dir,
        "save_scenario": config.save_scenario,
        "filters": list(config.filters),
        "frame": {
            "mode": frame.mode,
            "dft_size": frame.dft_size,
            "frame_shift": frame.frame_shift,
            "taps": frame.taps,
            "window": frame.window,
            "sample_rate": frame.sample_rate,
        },
        "fdkf": {
            "state_transition": config.fdkf.state_transition,
            "smoothing": config.fdkf.smoothing,
            "initial_p": config.fdkf.initial_p,
            "regularization": config.fdkf.regularization,
        },
        "nlms": {
            "length": config.nlms.length,
            "stepsize": config.nlms.stepsize,
            "regularization": config.nlms.regularization,
        },
        "gain_laws": {
            "fd_nlms": {
                "stepsize": config.gain_laws.fd_nlms_stepsize,
                "regularization": config.gain_laws.fd_nlms_regularization,
            },
            "vss": {
                "mu_factor": config.gain_laws.vss_mu_factor,
                "err_factor": config.gain_laws.vss_err_factor,
                "forgetting": config.gain_laws.vss_forgetting,
                "floor": config.gain_laws.vss_floor,
            },
        },
        "metrics": {
            "erle_smoothing": config.metrics.erle_smoothing,
            "erle_cap_db": config.metrics.erle_cap_db,
            "warmup_seconds": config.metrics.warmup_seconds,
            "final_window_seconds": config.metrics.final_window_seconds,
        },
    }
    if config.scenario is not None:
        spec = config.scenario
        out["scenario"] = {
            "seed": spec.seed,
            "ser_db": spec.ser_db,
            "snr_db": spec.snr_db,
            "sections": [
                {"kind": s.kind, "duration": s.duration} for s in spec.sections
            ],
            "rir": [
                {
                    "time": time_s,
                    "rt60": rir.rt60,
                    "length": rir.length,
                    "seed": rir.seed,
                    "allow_extended": rir.allow_extended,
                }
                for time_s, rir in spec.rir_schedule
            ],
            "nonlinearity": {
                "kind": spec.nonlinearity.kind,
                "sef_alpha": spec.nonlinearity.sef_alpha,
                "sigmoid": {
                    "gain": spec.nonlinearity.sigmoid.gain,
                    "slope_pos": spec.nonlinearity.sigmoid.slope_pos,
                    "slope_neg": spec.nonlinearity.sigmoid.slope_neg,
                    "c1": spec.nonlinearity.sigmoid.c1,
                    "c2": spec.nonlinearity.sigmoid.c2,
                },
            },
            "far_source": {"kind": spec.far_source.kind, "path": spec.far_source.path},
            "near_source": {
                "kind": spec.near_source.kind,
                "path": spec.near_source.path,
            },
        }
    if config.inputs is not None:
        out["inputs"] = {
            "reference": config.inputs.reference,
            "microphone": config.inputs.microphone,
            "echo": config.inputs.echo,
            "near_speech": config.inputs.near_speech,
            "noise": config.inputs.noise,
        }
    return out


def save_config(config: ExperimentConfig, path) -> None:
    """Echo the materialized configuration to a YAML file."""
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(config_to_dict(config), handle, sort_keys=True)
