"""Synthetic acoustic echo scenarios with full ground truth.

A scenario bundles every component of the microphone mixture: the far-end
reference x, its distorted loudspeaker version x', the echo d, near-end
speech s, background noise n, and the microphone signal y = s + n + d
(sample-exact). Activity follows an ordered section plan of single-talk
far-end (``stfe``), single-talk near-end (``stne``), and double-talk
(``dt``) sections; the echo path may switch mid-signal. Everything is
fully determined by (spec, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad
from scipy.signal import fftconvolve

from .errors import ConfigurationError

SECTION_STFE = "stfe"
SECTION_STNE = "stne"
SECTION_DT = "dt"
_SECTION_KINDS = (SECTION_STFE, SECTION_STNE, SECTION_DT)

NONLINEARITY_NONE = "none"
NONLINEARITY_SEF = "sef"
NONLINEARITY_SIGMOID = "sigmoid"

#: Default draw set for the saturation parameter alpha of the SEF curve;
#: 999 is effectively linear for inputs bounded by 1.
SEF_ALPHA_CHOICES = (0.5, 1.0, 10.0, 999.0)

#: Speech-activity threshold used for SER/SNR power measurements:
#: -40 dB (power) below the measured segment's peak.
ACTIVITY_THRESHOLD_DB = -40.0


@dataclass(frozen=True)
class RirSpec:
    """Synthetic room impulse response parameters.

    The response is white Gaussian noise shaped by an exponential decay
    whose time constant realizes a 60 dB energy drop over ``rt60``
    seconds, normalized to unit energy. The reverberation range is kept
    to [0.05, 0.6] s unless ``allow_extended`` is set.
    """

    rt60: float
    length: int | None = None
    sample_rate: int = 16000
    seed: int | None = None
    allow_extended: bool = False

    def __post_init__(self):
        if self.rt60 <= 0.0:
            raise ConfigurationError(f"rt60 must be positive, got {self.rt60}")
        if not self.allow_extended and not 0.05 <= self.rt60 <= 0.6:
            raise ConfigurationError(
                f"rt60={self.rt60} outside [0.05, 0.6] s; set allow_extended "
                "to override"
            )
        if self.length is not None and self.length < 1:
            raise ConfigurationError(f"length must be >= 1, got {self.length}")
        if self.sample_rate <= 0:
            raise ConfigurationError(
                f"sample_rate must be positive, got {self.sample_rate}"
            )

    @property
    def num_samples(self) -> int:
        if self.length is not None:
            return self.length
        return int(round(self.rt60 * self.sample_rate))


def synth_rir(spec: RirSpec) -> np.ndarray:
    """Generate the unit-energy exponentially decaying noise response."""
    rng = np.random.default_rng(spec.seed)
    n = np.arange(spec.num_samples)
    # 60 dB amplitude-squared decay over rt60 seconds
    tau = spec.rt60 * spec.sample_rate / (3.0 * math.log(10.0))
    response = rng.standard_normal(spec.num_samples) * np.exp(-n / tau)
    norm = np.linalg.norm(response)
    if norm == 0.0:
        raise ConfigurationError("degenerate RIR draw with zero energy")
    return response / norm


def sef_distort(x, alpha: float, series_tol: float = 1e-15, series_span: float = 3.0):
    """Saturating loudspeaker curve: integral of exp(z^2/(2 alpha^2)) from 0 to x.

    Evaluated by a termwise-integrated power series for |x/alpha| up to
    ``series_span`` (relative error well below 1e-9) and by adaptive
    quadrature beyond. Large alpha approaches the identity; the curve is
    odd in x.
    """
    if alpha <= 0.0:
        raise ConfigurationError(f"sef alpha must be positive, got {alpha}")
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.empty_like(arr)

    inside = np.abs(arr / alpha) <= series_span
    xi = arr[inside]
    if xi.size:
        u = xi * xi / (2.0 * alpha * alpha)
        acc = xi.copy()
        term = xi.copy()  # x * u^m / m!
        m = 0
        while True:
            m += 1
            term = term * u / m
            contribution = term / (2 * m + 1)
            acc += contribution
            if np.all(np.abs(contribution) <= series_tol * np.abs(acc) + 1e-300):
                break
            if m > 400:  # unreachable within the series span
                break
        out[inside] = acc
    if not np.all(inside):
        integrand = lambda z: math.exp(z * z / (2.0 * alpha * alpha))
        for idx in np.flatnonzero(~inside):
            value = arr[idx]
            mag, _ = quad(integrand, 0.0, abs(value), limit=200)
            out[idx] = math.copysign(mag, value)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class SigmoidParams:
    """Constants of the memoryless asymmetric sigmoid distortion.

    The curve is ``gain * (2 / (1 + exp(-a*b)) - 1)`` with the skewed
    argument ``b = c1*x + c2*x^2`` and slope ``a = slope_pos`` where b > 0,
    ``slope_neg`` otherwise. The defaults are a documented choice of a
    harsh, measurably nonlinear loudspeaker stand-in, not a calibrated
    device model; they are scenario parameters.
    """

    gain: float = 1.0
    slope_pos: float = 4.0
    slope_neg: float = 0.5
    c1: float = 1.5
    c2: float = -0.3


def sigmoid_distort(x, params: SigmoidParams | None = None):
    """Memoryless sigmoidal saturation, monotone on [-1, 1] and 0 at 0."""
    p = params if params is not None else SigmoidParams()
    arr = np.asarray(x, dtype=float)
    b = p.c1 * arr + p.c2 * arr * arr
    slope = np.where(b > 0.0, p.slope_pos, p.slope_neg)
    out = p.gain * (2.0 / (1.0 + np.exp(-slope * b)) - 1.0)
    return float(out) if arr.ndim == 0 else out


@dataclass(frozen=True)
class NonlinearitySpec:
    """Loudspeaker nonlinearity selection for scenario generation."""

    kind: str = NONLINEARITY_NONE
    sef_alpha: float = 1.0
    sigmoid: SigmoidParams = field(default_factory=SigmoidParams)

    def __post_init__(self):
        if self.kind not in (NONLINEARITY_NONE, NONLINEARITY_SEF, NONLINEARITY_SIGMOID):
            raise ConfigurationError(f"unknown nonlinearity kind {self.kind!r}")
        if self.sef_alpha <= 0.0:
            raise ConfigurationError(
                f"sef_alpha must be positive, got {self.sef_alpha}"
            )

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.kind == NONLINEARITY_NONE:
            return np.array(x, dtype=float, copy=True)
        if self.kind == NONLINEARITY_SEF:
            return sef_distort(x, self.sef_alpha)
        return sigmoid_distort(x, self.sigmoid)


@dataclass(frozen=True)
class SectionSpec:
    """One activity section of the plan."""

    kind: str
    duration: float

    def __post_init__(self):
        if self.kind not in _SECTION_KINDS:
            raise ConfigurationError(
                f"section kind must be one of {_SECTION_KINDS}, got {self.kind!r}"
            )
        if self.duration <= 0.0:
            raise ConfigurationError(
                f"section duration must be positive, got {self.duration}"
            )


def default_sections() -> list[SectionSpec]:
    """Three consecutive 8 s sections: far-end, near-end, double-talk."""
    return [
        SectionSpec(SECTION_STFE, 8.0),
        SectionSpec(SECTION_STNE, 8.0),
        SectionSpec(SECTION_DT, 8.0),
    ]


SOURCE_WGN = "wgn"
SOURCE_SPEECH = "speech"
SOURCE_WAV = "wav"


@dataclass(frozen=True)
class SourceSpec:
    """Origin of a scenario source signal.

    ``wgn`` is white Gaussian noise, ``speech`` a pink-weighted noise with
    a slow amplitude modulation serving as a deterministic speech proxy,
    ``wav`` reads the samples from ``path`` (looped or truncated to the
    scenario length).
    """

    kind: str = SOURCE_WGN
    path: str | None = None

    def __post_init__(self):
        if self.kind not in (SOURCE_WGN, SOURCE_SPEECH, SOURCE_WAV):
            raise ConfigurationError(f"unknown source kind {self.kind!r}")
        if self.kind == SOURCE_WAV and not self.path:
            raise ConfigurationError("wav source requires a path")


@dataclass(frozen=True)
class ScenarioSpec:
    """Complete recipe for one synthetic test scenario."""

    sections: tuple = ()
    ser_db: float = 0.0
    snr_db: float | None = 20.0
    rir_schedule: tuple = ()
    nonlinearity: NonlinearitySpec = field(default_factory=NonlinearitySpec)
    far_source: SourceSpec = field(default_factory=SourceSpec)
    near_source: SourceSpec = field(default_factory=lambda: SourceSpec(SOURCE_SPEECH))
    seed: int = 0
    sample_rate: int = 16000

    def __post_init__(self):
        sections = tuple(self.sections) if self.sections else tuple(default_sections())
        object.__setattr__(self, "sections", sections)
        schedule = tuple(self.rir_schedule) if self.rir_schedule else (
            (0.0, RirSpec(0.2, sample_rate=self.sample_rate)),
        )
        object.__setattr__(self, "rir_schedule", schedule)
        if self.sample_rate <= 0:
            raise ConfigurationError(
                f"sample_rate must be positive, got {self.sample_rate}"
            )
        total = self.duration
        times = [float(t) for t, _ in schedule]
        if times != sorted(times):
            raise ConfigurationError("rir_schedule times must be ascending")
        if times[0] != 0.0:
            raise ConfigurationError("rir_schedule must start at time 0.0")
        for t, spec in schedule:
            if not 0.0 <= t < total:
                raise ConfigurationError(
                    f"rir switch at {t} s lies outside the {total} s signal"
                )
            if spec.sample_rate != self.sample_rate:
                raise ConfigurationError(
                    "rir sample rate differs from the scenario sample rate"
                )

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.sections)

    @property
    def num_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))


@dataclass
class Scenario:
    """Generated signal bundle with all ground-truth components.

    The component identity ``y = s + n + d`` holds to the last bit, the
    near-end speech is exactly zero in far-end single-talk sections, and
    the reference is exactly zero in near-end single-talk sections.
    """

    reference: np.ndarray          # x(n), far-end reference
    loudspeaker: np.ndarray        # x'(n), after the nonlinearity
    echo: np.ndarray               # d(n)
    near_speech: np.ndarray        # s(n)
    noise: np.ndarray              # n(n)
    microphone: np.ndarray         # y(n) = s + n + d
    rirs: list                     # [(start_sample, impulse_response)]
    sections: list                 # [(kind, start_sample, stop_sample)]
    sample_rate: int
    spec: ScenarioSpec | None = None

    @property
    def num_samples(self) -> int:
        return len(self.microphone)

    def rir_at(self, sample: int) -> np.ndarray:
        """Impulse response active at the given sample index."""
        active = self.rirs[0][1]
        for start, response in self.rirs:
            if start <= sample:
                active = response
            else:
                break
        return active

    def sections_of(self, kind: str) -> list:
        return [s for s in self.sections if s[0] == kind]


def echo_with_switches(signal, schedule, total: int | None = None) -> np.ndarray:
    """Convolve a signal with a piecewise-constant impulse-response schedule.

    ``schedule`` is a list of ``(start_sample, impulse_response)`` entries
    sorted by start, the first at sample 0. Each segment is convolved with
    freshly zeroed filter memory: samples before a switch are untouched
    and post-switch output sees only post-switch input, so a switch to an
    identical response perturbs at most the first len(h)-1 samples after
    the switch.
    """
    x = np.asarray(signal, dtype=float)
    n = len(x) if total is None else int(total)
    if not schedule:
        raise ConfigurationError("empty impulse-response schedule")
    starts = [int(s) for s, _ in schedule]
    if starts != sorted(starts):
        raise ConfigurationError("schedule starts must be ascending")
    if starts[0] != 0:
        raise ConfigurationError("schedule must start at sample 0")
    if starts[-1] >= n and n > 0:
        raise ConfigurationError("schedule start beyond the signal end")
    out = np.zeros(n)
    bounds = starts + [n]
    for (start, response), stop in zip(schedule, bounds[1:]):
        if stop <= start:
            continue
        segment = x[start:stop]
        out[start:stop] = fftconvolve(segment, np.asarray(response, dtype=float))[
            : stop - start
        ]
    return out


def white_noise(rng: np.random.Generator, num_samples: int) -> np.ndarray:
    return rng.standard_normal(num_samples)


def speech_shaped_noise(
    rng: np.random.Generator, num_samples: int, sample_rate: int
) -> np.ndarray:
    """Pink-weighted noise with a 4 Hz amplitude modulation.

    A deterministic desk-scale stand-in for speech: the spectral tilt
    emphasizes low frequencies and the modulation creates alternating
    strong and weak excitation like syllables do.
    """
    spectrum = np.fft.rfft(rng.standard_normal(num_samples))
    freqs = np.fft.rfftfreq(num_samples, 1.0 / sample_rate)
    weights = 1.0 / np.sqrt(np.maximum(freqs, 50.0))
    shaped = np.fft.irfft(spectrum * weights, num_samples)
    t = np.arange(num_samples) / sample_rate
    envelope = 0.15 + 0.85 * 0.5 * (1.0 + np.sin(2.0 * np.pi * 4.0 * t))
    return shaped * envelope


def _generate_source(
    source: SourceSpec, rng: np.random.Generator, num_samples: int, sample_rate: int
) -> np.ndarray:
    if source.kind == SOURCE_WGN:
        return white_noise(rng, num_samples)
    if source.kind == SOURCE_SPEECH:
        return speech_shaped_noise(rng, num_samples, sample_rate)
    from .audio_io import read_wav  # local import to avoid a cycle

    buffer = read_wav(source.path, expected_rate=sample_rate)
    samples = buffer.samples
    if len(samples) == 0:
        raise ConfigurationError(f"source file {source.path} is empty")
    if len(samples) < num_samples:
        reps = math.ceil(num_samples / len(samples))
        samples = np.tile(samples, reps)
    return samples[:num_samples].copy()


def _activity_mask(signal: np.ndarray, region: np.ndarray) -> np.ndarray:
    """Samples of `region` whose power is within 40 dB of the region peak."""
    mask = np.zeros(len(signal), dtype=bool)
    power = signal[region] ** 2
    if power.size == 0:
        return mask
    peak = float(np.max(power))
    if peak == 0.0:
        return mask
    threshold = peak * 10.0 ** (ACTIVITY_THRESHOLD_DB / 10.0)
    mask[region] = power >= threshold
    return mask


def build_scenario(spec: ScenarioSpec) -> Scenario:
    """Generate every component of a scenario from its spec.

    Generation order: sources, section activity masks, reference peak
    normalization, loudspeaker nonlinearity, echo via the RIR schedule,
    SER scaling of the near-end speech over the double-talk section,
    then SNR scaling of the noise.
    """
    fs = spec.sample_rate
    total = spec.num_samples
    if total <= 0:
        raise ConfigurationError("scenario has no samples")

    # Independent deterministic substreams per component.
    seeds = np.random.SeedSequence(spec.seed).spawn(3 + len(spec.rir_schedule))
    rng_far = np.random.default_rng(seeds[0])
    rng_near = np.random.default_rng(seeds[1])
    rng_noise = np.random.default_rng(seeds[2])

    sections = []
    cursor = 0
    for section in spec.sections:
        stop = cursor + int(round(section.duration * fs))
        sections.append((section.kind, cursor, min(stop, total)))
        cursor = stop

    far_mask = np.zeros(total, dtype=bool)
    near_mask = np.zeros(total, dtype=bool)
    for kind, start, stop in sections:
        if kind in (SECTION_STFE, SECTION_DT):
            far_mask[start:stop] = True
        if kind in (SECTION_STNE, SECTION_DT):
            near_mask[start:stop] = True

    reference = _generate_source(spec.far_source, rng_far, total, fs)
    reference = reference * far_mask
    peak = float(np.max(np.abs(reference)))
    if peak > 0.0:
        reference = reference / peak
    loudspeaker = spec.nonlinearity.apply(reference)

    rirs = []
    for offset, (time_s, rir_spec) in enumerate(spec.rir_schedule):
        if rir_spec.seed is None:
            rir_spec = replace(rir_spec, seed=int(seeds[3 + offset].generate_state(1)[0]))
        rirs.append((int(round(time_s * fs)), synth_rir(rir_spec)))
    echo = echo_with_switches(loudspeaker, rirs, total)

    near = _generate_source(spec.near_source, rng_near, total, fs)
    near = near * near_mask
    rms = float(np.sqrt(np.mean(near[near_mask] ** 2))) if near_mask.any() else 0.0
    if rms > 0.0:
        near = near / rms

    # SER calibration over the double-talk section(s), measured on samples
    # where the near-end speech is active.
    dt_region = np.zeros(total, dtype=bool)
    for kind, start, stop in sections:
        if kind == SECTION_DT:
            dt_region[start:stop] = True
    if dt_region.any() and near_mask.any():
        active = _activity_mask(near, dt_region)
        if active.any():
            p_near = float(np.mean(near[active] ** 2))
            p_echo = float(np.mean(echo[active] ** 2))
            if p_echo > 0.0 and p_near > 0.0:
                near = near * math.sqrt(
                    p_echo * 10.0 ** (spec.ser_db / 10.0) / p_near
                )

    # SNR reference power: active near-end speech when present, otherwise
    # the echo over far-end-active samples (keeps single-talk far-end
    # scenarios from degenerating to zero noise).
    if spec.snr_db is None:
        noise = np.zeros(total)
    else:
        if near_mask.any():
            active = _activity_mask(near, near_mask)
            p_ref = float(np.mean(near[active] ** 2)) if active.any() else 0.0
        elif far_mask.any():
            p_ref = float(np.mean(echo[far_mask] ** 2))
        else:
            p_ref = 0.0
        if p_ref > 0.0:
            target = p_ref * 10.0 ** (-spec.snr_db / 10.0)
            noise = white_noise(rng_noise, total) * math.sqrt(target)
        else:
            noise = np.zeros(total)

    microphone = near + noise + echo
    return Scenario(
        reference=reference,
        loudspeaker=loudspeaker,
        echo=echo,
        near_speech=near,
        noise=noise,
        microphone=microphone,
        rirs=rirs,
        sections=sections,
        sample_rate=fs,
        spec=spec,
    )
