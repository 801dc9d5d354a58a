"""Frame segmentation, windowing, and the OLA/OLS block-processing engines.

Every adaptive filter in this package runs on K-bin DFT frames taken with a
frame shift of R samples. Two block-processing modes are supported:

* ``ola``: sqrt-Hann analysis and synthesis windows with overlap-add
  reconstruction. Per-bin filtering is circular within the windowed frame;
  the algorithmic delay equals the DFT size K.
* ``ols``: rectangular analysis over the K-sample buffer. Per-bin
  multiplication with the DFT of a zero-padded filter of length
  N = K - R + 1 realizes exact linear convolution; the last R output
  samples of each frame are valid and the algorithmic delay equals R.

Frames keep all K bins (not K/2+1) so the per-bin recursions never have to
special-case DC or Nyquist. The DFT convention is numpy's forward
transform: bin k of a buffer x holds sum_n x[n] exp(-2j*pi*k*n/K).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

MODE_OLA = "ola"
MODE_OLS = "ols"

WINDOW_SQRT_HANN = "sqrt_hann"
WINDOW_RECT = "rect"

#: Maximum accepted relative COLA deviation when validating an OLA config.
COLA_TOLERANCE = 1e-8


def window_coefficients(kind: str, size: int) -> np.ndarray:
    """Return the K analysis window coefficients for the named window.

    The sqrt-Hann window is realized with a half-sample offset,
    w[n] = sin(pi * (n + 0.5) / K). This form is symmetric
    (w[n] == w[K-1-n]) and its square overlap-adds to an exact constant
    for every shift that divides K with at least 2x overlap.
    """
    if size < 2:
        raise ConfigurationError(f"window size must be >= 2, got {size}")
    if kind == WINDOW_SQRT_HANN:
        n = np.arange(size)
        return np.sin(np.pi * (n + 0.5) / size)
    if kind == WINDOW_RECT:
        return np.ones(size)
    raise ConfigurationError(f"unsupported window {kind!r}")


def check_cola(window: np.ndarray, shift: int) -> float:
    """Maximum relative deviation of the squared-window overlap sum.

    Sums w^2 over all shifts of `shift` samples and reports
    max |S(n) - C| / C over interior samples, with C the median overlap
    sum. Zero means the window pair satisfies constant overlap-add
    exactly at this shift.
    """
    window = np.asarray(window, dtype=float)
    size = len(window)
    if shift > size:
        raise ConfigurationError(
            f"frame shift {shift} exceeds window length {size}"
        )
    if shift < 1:
        raise ConfigurationError(f"frame shift must be >= 1, got {shift}")
    squared = window**2
    span = 3 * size
    acc = np.zeros(span + size)
    for start in range(0, span, shift):
        acc[start : start + size] += squared
    interior = acc[size : 2 * size]
    norm = float(np.median(interior))
    if norm == 0.0:
        return math.inf
    return float(np.max(np.abs(interior - norm)) / norm)


def cola_constant(window: np.ndarray, shift: int) -> float:
    """Median overlap sum of the squared window, used as the
    reconstruction normalization constant of the OLA pipeline."""
    window = np.asarray(window, dtype=float)
    size = len(window)
    squared = window**2
    acc = np.zeros(4 * size)
    for start in range(0, 3 * size, shift):
        acc[start : start + size] += squared
    return float(np.median(acc[size : 2 * size]))


@dataclass(frozen=True)
class FrameConfig:
    """Framing parameters shared by analysis, synthesis, and the filters.

    Attributes
    ----------
    dft_size : int
        DFT length K in samples.
    frame_shift : int
        Hop R in samples, 1 <= R <= K (R <= K-1 in OLS mode).
    taps : int
        Number of reference frame taps L applied per bin.
    mode : str
        ``"ola"`` or ``"ols"``.
    window : str
        ``"sqrt_hann"`` or ``"rect"``. OLS mode requires ``"rect"``.
    sample_rate : int
        Sample rate in Hz.
    """

    dft_size: int
    frame_shift: int
    taps: int = 1
    mode: str = MODE_OLA
    window: str = WINDOW_SQRT_HANN
    sample_rate: int = 16000

    def __post_init__(self):
        if self.dft_size < 2:
            raise ConfigurationError(f"dft_size must be >= 2, got {self.dft_size}")
        if not 1 <= self.frame_shift <= self.dft_size:
            raise ConfigurationError(
                f"frame_shift must satisfy 1 <= R <= K, got R={self.frame_shift}, "
                f"K={self.dft_size}"
            )
        if self.taps < 1:
            raise ConfigurationError(f"taps must be >= 1, got {self.taps}")
        if self.mode not in (MODE_OLA, MODE_OLS):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.window not in (WINDOW_SQRT_HANN, WINDOW_RECT):
            raise ConfigurationError(f"unknown window {self.window!r}")
        if self.sample_rate <= 0:
            raise ConfigurationError(
                f"sample_rate must be positive, got {self.sample_rate}"
            )
        if self.mode == MODE_OLS:
            if self.frame_shift > self.dft_size - 1:
                raise ConfigurationError(
                    "OLS mode requires R <= K - 1 so at least one sample of "
                    f"overlap is retained, got R={self.frame_shift}, K={self.dft_size}"
                )
            if self.window != WINDOW_RECT:
                raise ConfigurationError(
                    "OLS analysis is unwindowed; use window='rect'"
                )
        else:
            deviation = check_cola(
                window_coefficients(self.window, self.dft_size), self.frame_shift
            )
            if deviation > COLA_TOLERANCE:
                raise ConfigurationError(
                    f"window {self.window!r} does not satisfy constant "
                    f"overlap-add at shift {self.frame_shift} "
                    f"(deviation {deviation:.3e})"
                )

    @property
    def overlap_ratio(self) -> float:
        """Frame shift over DFT size, R/K."""
        return self.frame_shift / self.dft_size

    @property
    def model_length(self) -> int:
        """Echo-path length N = K - R + 1 modelled per tap (OLS convention)."""
        return self.dft_size - self.frame_shift + 1

    @property
    def reference_span(self) -> int:
        """Effective reference input length M = K + (L-1)*R, the number of
        unique reference samples seen by one filter update."""
        return self.dft_size + (self.taps - 1) * self.frame_shift

    @property
    def warmup_frames(self) -> int:
        """Frames whose analysis buffer still contains start-up zeros."""
        return math.ceil(self.dft_size / self.frame_shift) - 1

    @property
    def algorithmic_delay(self) -> int:
        """Real-time latency in samples: R for OLS, K for OLA."""
        return self.frame_shift if self.mode == MODE_OLS else self.dft_size

    @property
    def synthesis_lag(self) -> int:
        """Array offset between naively concatenated synthesis chunks and
        the input timeline: K - R for OLA, 0 for OLS."""
        return 0 if self.mode == MODE_OLS else self.dft_size - self.frame_shift


def make_window(config: FrameConfig) -> np.ndarray:
    """Analysis window for the given config (coefficients in [0, 1])."""
    return window_coefficients(config.window, config.dft_size)


@dataclass
class SpectralFrame:
    """One DFT frame: K complex bins plus the producing frame index."""

    index: int
    bins: np.ndarray
    origin: str = ""

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=complex)


def frame_bins(frame) -> np.ndarray:
    """Accept either a SpectralFrame or a bare array of bins."""
    if isinstance(frame, SpectralFrame):
        return frame.bins
    return np.asarray(frame, dtype=complex)


class AnalysisStream:
    """Streaming segmentation of one signal into DFT frames.

    The internal buffer starts zeroed, so the first frames see the input
    zero-padded on the left. ``step`` consumes exactly R new samples and
    returns the DFT of the (windowed) most recent K samples; output frame
    l therefore depends only on chunks 0..l.
    """

    def __init__(self, config: FrameConfig, origin: str = ""):
        self.config = config
        self.origin = origin
        self._window = make_window(config)
        self._buffer = np.zeros(config.dft_size)
        self._count = 0

    @property
    def frames_produced(self) -> int:
        return self._count

    def step(self, chunk) -> SpectralFrame:
        chunk = np.asarray(chunk, dtype=float)
        shift = self.config.frame_shift
        if chunk.shape != (shift,):
            raise ValueError(
                f"analysis chunk must hold exactly {shift} samples, "
                f"got shape {chunk.shape}"
            )
        self._buffer[:-shift] = self._buffer[shift:]
        self._buffer[-shift:] = chunk
        bins = np.fft.fft(self._window * self._buffer)
        frame = SpectralFrame(self._count, bins, self.origin)
        self._count += 1
        return frame


class OlaSynthesisStream:
    """Weighted overlap-add synthesis emitting R samples per frame.

    Frames are expected to carry conjugate symmetry (real target signal);
    frames whose IDFT has a relative imaginary part beyond ``asymmetry_tol``
    increment ``asymmetry_warnings`` and the imaginary part is discarded.
    """

    asymmetry_tol = 1e-9

    def __init__(self, config: FrameConfig):
        if config.mode != MODE_OLA:
            raise ConfigurationError("OlaSynthesisStream requires an OLA config")
        self.config = config
        self._window = make_window(config)
        self._norm = cola_constant(self._window, config.frame_shift)
        self._acc = np.zeros(config.dft_size)
        self.asymmetry_warnings = 0

    def step(self, frame) -> np.ndarray:
        bins = frame_bins(frame)
        if bins.shape != (self.config.dft_size,):
            raise ValueError(
                f"frame must hold {self.config.dft_size} bins, got {bins.shape}"
            )
        samples = np.fft.ifft(bins)
        peak = np.max(np.abs(samples.real))
        if np.max(np.abs(samples.imag)) > self.asymmetry_tol * max(peak, 1e-300):
            self.asymmetry_warnings += 1
        shift = self.config.frame_shift
        self._acc += samples.real * self._window
        out = self._acc[:shift] / self._norm
        self._acc[:-shift] = self._acc[shift:]
        self._acc[-shift:] = 0.0
        return out


class OlsSynthesisStream:
    """Overlap-save synthesis: IDFT and retention of the last R samples."""

    asymmetry_tol = 1e-9

    def __init__(self, config: FrameConfig):
        if config.mode != MODE_OLS:
            raise ConfigurationError("OlsSynthesisStream requires an OLS config")
        self.config = config
        self.asymmetry_warnings = 0

    def step(self, frame) -> np.ndarray:
        bins = frame_bins(frame)
        if bins.shape != (self.config.dft_size,):
            raise ValueError(
                f"frame must hold {self.config.dft_size} bins, got {bins.shape}"
            )
        samples = np.fft.ifft(bins)
        peak = np.max(np.abs(samples.real))
        if np.max(np.abs(samples.imag)) > self.asymmetry_tol * max(peak, 1e-300):
            self.asymmetry_warnings += 1
        return samples.real[-self.config.frame_shift :].copy()


def make_synthesis_stream(config: FrameConfig):
    """Synthesis engine matching the config's block-processing mode."""
    if config.mode == MODE_OLS:
        return OlsSynthesisStream(config)
    return OlaSynthesisStream(config)


def filter_to_bins(impulse_response, config: FrameConfig) -> np.ndarray:
    """DFT of a time-domain filter zero-padded to the frame size.

    The filter must not exceed the per-tap model length N = K - R + 1,
    otherwise per-bin multiplication would wrap (circular convolution).
    """
    h = np.asarray(impulse_response, dtype=float)
    if h.ndim != 1:
        raise ValueError("impulse response must be one-dimensional")
    if len(h) > config.model_length:
        raise ConfigurationError(
            f"impulse response of length {len(h)} exceeds the modelled "
            f"length N={config.model_length}"
        )
    padded = np.zeros(config.dft_size)
    padded[: len(h)] = h
    return np.fft.fft(padded)


def equivalent_impulse_response(filter_taps, config: FrameConfig) -> np.ndarray:
    """Time-domain response equivalent to per-bin filter taps.

    ``filter_taps`` has shape (L, K) (a single tap may be passed as a
    1-D array). Tap t models the echo-path segment starting at lag t*R;
    following the OLS zero-padding convention only the first
    N = K - R + 1 IDFT samples of each tap are kept. The result has
    length (L-1)*R + N.
    """
    taps = np.atleast_2d(np.asarray(filter_taps, dtype=complex))
    n_taps, size = taps.shape
    if size != config.dft_size:
        raise ValueError(
            f"filter taps must hold {config.dft_size} bins, got {size}"
        )
    shift = config.frame_shift
    length = config.model_length
    out = np.zeros((n_taps - 1) * shift + length)
    for t in range(n_taps):
        out[t * shift : t * shift + length] += np.fft.ifft(taps[t]).real[:length]
    return out
