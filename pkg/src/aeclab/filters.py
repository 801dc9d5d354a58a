"""Per-bin adaptive filters for echo cancellation.

The centerpiece is the frequency-domain adaptive Kalman filter: a per-bin
recursion over an L-tap filter estimate, a common scalar state-error
covariance per bin, and an empirical observation-noise estimate. One frame
step runs, in order:

1. shift the newest reference frame into the tap history,
2. echo estimate and prediction error,
3. observation-noise update from the current error,
4. gain (closed-form Kalman gain by default, pluggable alternatives),
5. filter-state update,
6. covariance propagation with echo-path drift noise.

In OLS framing the adaptation error (steps 3-5) is first confined to the
R new samples of the frame, the region that actually carries
linear-convolution error; the emitted error signal itself is untouched.

All per-bin operations are vectorized over the K bins; given identical
inputs the state trajectory is bit-identical across runs.

A sample-wise time-domain NLMS canceller is included as the classical
baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .framing import FrameConfig, frame_bins

#: Scale of the adaptive gain-denominator floor: the effective
#: regularization is this factor times the running mean reference power.
ADAPTIVE_REG_SCALE = 1e-10


@dataclass
class FdkfParams:
    """Parameters of the frequency-domain Kalman filter.

    Attributes
    ----------
    state_transition : float
        Frame-to-frame retention factor A, 0 < A <= 1 and typically close
        to unity. Per-frame values may override it via ``Fdkf.step``.
    smoothing : float
        Observation-noise smoothing factor (0 <= beta < 1).
    overlap_ratio : float
        Frame shift over DFT size, R/K.
    taps : int
        Reference frame taps L per bin.
    initial_p : float
        Initial per-bin state-error covariance.
    regularization : float or None
        Absolute power added to the gain denominator. ``None`` selects an
        adaptive floor of ``ADAPTIVE_REG_SCALE`` times the running mean
        reference power, which keeps silence segments from dividing by
        zero without touching well-excited bins.
    valid_error_samples : int or None
        When set, the adaptation error is confined to the last this many
        time-domain samples of the frame (zero elsewhere) before it
        drives the noise estimate, gain, and filter update. OLS framing
        sets this to the frame shift R: only the R new samples of an OLS
        frame carry linear-convolution error, and the R/K factors of the
        gain and covariance recursions assume exactly that support. The
        emitted error signal is unaffected.
    """

    state_transition: float = 0.999
    smoothing: float = 0.5
    overlap_ratio: float = 1.0
    taps: int = 1
    initial_p: float = 1.0
    regularization: float | None = None
    valid_error_samples: int | None = None

    def __post_init__(self):
        if not 0.0 < self.state_transition <= 1.0:
            raise ConfigurationError(
                "state_transition must satisfy 0 < A <= 1, "
                f"got {self.state_transition}"
            )
        if not 0.0 <= self.smoothing < 1.0:
            raise ConfigurationError(
                f"smoothing must be in [0, 1), got {self.smoothing}"
            )
        if not 0.0 < self.overlap_ratio <= 1.0:
            raise ConfigurationError(
                f"overlap_ratio must be in (0, 1], got {self.overlap_ratio}"
            )
        if self.taps < 1:
            raise ConfigurationError(f"taps must be >= 1, got {self.taps}")
        if self.initial_p <= 0.0:
            raise ConfigurationError(
                f"initial_p must be positive, got {self.initial_p}"
            )
        if self.regularization is not None and self.regularization < 0.0:
            raise ConfigurationError(
                f"regularization must be >= 0, got {self.regularization}"
            )
        if self.valid_error_samples is not None and self.valid_error_samples < 1:
            raise ConfigurationError(
                f"valid_error_samples must be >= 1, got {self.valid_error_samples}"
            )

    @classmethod
    def for_frames(cls, config: FrameConfig, **overrides) -> "FdkfParams":
        """Derive overlap ratio, tap count, and the adaptation-error
        support from a framing config."""
        overrides.setdefault("overlap_ratio", config.overlap_ratio)
        overrides.setdefault("taps", config.taps)
        if config.mode == "ols":
            overrides.setdefault("valid_error_samples", config.frame_shift)
        return cls(**overrides)


class FdkfState:
    """Mutable per-bin state of the frequency-domain Kalman filter.

    Arrays are (taps, bins) for the filter estimate and reference history
    and (bins,) for the covariance and noise estimate. The covariance and
    noise estimate stay non-negative under any input stream.
    """

    def __init__(self, num_bins: int, taps: int = 1, initial_p: float = 1.0):
        self.history = np.zeros((taps, num_bins), dtype=complex)
        self.filter_taps = np.zeros((taps, num_bins), dtype=complex)
        self.covariance = np.full(num_bins, float(initial_p))
        self.noise_power = np.zeros(num_bins)
        self.frame_count = 0
        self.ref_power_mean = 0.0
        self.covariance_clamps = 0

    @property
    def num_bins(self) -> int:
        return self.filter_taps.shape[1]

    @property
    def taps(self) -> int:
        return self.filter_taps.shape[0]


def push_reference(state: FdkfState, x_bins) -> None:
    """Shift the newest reference frame into the per-bin tap history."""
    state.history[1:] = state.history[:-1]
    state.history[0] = frame_bins(x_bins)


def prediction_error(y_bins, state: FdkfState):
    """Echo estimate and prediction error for the current frame.

    Returns ``(error, echo_estimate)`` with
    ``echo_estimate = sum_t history[t] * filter_taps[t]`` per bin and
    ``error = y - echo_estimate``. The state is not modified.
    """
    y = frame_bins(y_bins)
    echo = np.sum(state.history * state.filter_taps, axis=0)
    return y - echo, echo


def confine_error(error_bins, valid_samples: int) -> np.ndarray:
    """Zero the error frame outside its last ``valid_samples`` time-domain
    samples (the linear-convolution region of an OLS frame)."""
    samples = np.fft.ifft(frame_bins(error_bins))
    if valid_samples < len(samples):
        samples[: len(samples) - valid_samples] = 0.0
    return np.fft.fft(samples)


def effective_regularization(state: FdkfState, params: FdkfParams) -> float:
    if params.regularization is not None:
        return params.regularization
    return ADAPTIVE_REG_SCALE * state.ref_power_mean


def kalman_gain(state: FdkfState, params: FdkfParams) -> np.ndarray:
    """Closed-form per-bin Kalman gain, shape (taps, bins).

    With the common scalar covariance P per bin the quadratic form
    reduces to P * ||X||^2 over the taps, so the gain is
    ``(R/K) P X* / ((R/K) P ||X||^2 + noise + eps)``. A zero denominator
    (possible only with zero regularization and no excitation) yields a
    zero gain: no excitation, no update.
    """
    ratio = params.overlap_ratio
    eps = effective_regularization(state, params)
    excitation = np.sum(np.abs(state.history) ** 2, axis=0)
    denom = ratio * state.covariance * excitation + state.noise_power + eps
    safe = denom > 0.0
    scale = np.where(safe, ratio * state.covariance / np.where(safe, denom, 1.0), 0.0)
    return scale * np.conj(state.history)


def observation_noise_update(noise_power, error_bins, smoothing: float) -> np.ndarray:
    """First-order recursive estimate of the near-end-plus-noise power:
    ``beta * previous + (1 - beta) * |error|^2`` per bin."""
    return smoothing * np.asarray(noise_power) + (1.0 - smoothing) * np.abs(
        frame_bins(error_bins)
    ) ** 2


def filter_update(filter_taps, gain, error_bins, transition: float) -> np.ndarray:
    """Filter-state update ``A * (previous + gain * error)`` per bin/tap."""
    return transition * (
        np.asarray(filter_taps) + np.asarray(gain) * frame_bins(error_bins)
    )


def covariance_update(
    covariance,
    prev_taps,
    history,
    gain,
    overlap_ratio: float,
    transition: float,
):
    """Propagate the per-bin state-error covariance one frame.

    ``P_next = A^2 * P * (1 - (R/K) * X^T K) + drift`` with the echo-path
    drift power ``drift = (P + mean_t |H_prev|^2) * (1 - A^2)``. The
    contraction term (R/K) X^T K is mathematically real in [0, 1]; the
    real part is taken and clamped to absorb floating-point drift. Any
    bin whose covariance still lands below zero is clamped to zero and
    counted.

    Returns ``(new_covariance, clamped_bins)``.
    """
    covariance = np.asarray(covariance, dtype=float)
    a_sq = transition * transition
    shrink = overlap_ratio * np.real(np.sum(np.asarray(history) * np.asarray(gain), axis=0))
    shrink = np.clip(shrink, 0.0, 1.0)
    drift = (covariance + np.mean(np.abs(np.asarray(prev_taps)) ** 2, axis=0)) * (
        1.0 - a_sq
    )
    nxt = a_sq * covariance * (1.0 - shrink) + drift
    clamped = int(np.count_nonzero(nxt < 0.0))
    if clamped:
        nxt = np.maximum(nxt, 0.0)
    return nxt, clamped


def fd_nlms_gain(history, stepsize, regularization=0.0) -> np.ndarray:
    """Frequency-domain NLMS gain ``mu * X* / (||X||^2 + eps)`` per bin.

    ``stepsize`` may be a scalar or a per-bin array; values in [0, 2]
    keep the update stable. Zero excitation yields zero gain.
    """
    history = np.asarray(history, dtype=complex)
    power = np.sum(np.abs(history) ** 2, axis=0)
    denom = power + regularization
    safe = denom > 0.0
    scale = np.where(safe, np.asarray(stepsize) / np.where(safe, denom, 1.0), 0.0)
    return scale * np.conj(history)


def vss_gain(
    history,
    error_bins,
    ref_power,
    mu_factor,
    err_factor,
    forgetting: float = 0.9,
    floor: float = 1e-3,
):
    """Variable-stepsize gain with externally injected scaling factors.

    The per-bin reference power recursion is
    ``psi = forgetting * psi_prev + (1 - forgetting) * ||X||^2`` and the
    gain ``mu_factor * X* / (psi + |err_factor * error|^2 + floor)``.
    ``mu_factor`` and ``err_factor`` are scalars or per-bin arrays
    (injected from outside, e.g. a learned controller).

    Returns ``(gain, updated_ref_power)``.
    """
    if floor <= 0.0:
        raise ConfigurationError(f"vss floor must be positive, got {floor}")
    if not 0.0 <= forgetting < 1.0:
        raise ConfigurationError(
            f"vss forgetting factor must be in [0, 1), got {forgetting}"
        )
    history = np.asarray(history, dtype=complex)
    power = np.sum(np.abs(history) ** 2, axis=0)
    psi = forgetting * np.asarray(ref_power) + (1.0 - forgetting) * power
    denom = psi + np.abs(np.asarray(err_factor) * frame_bins(error_bins)) ** 2 + floor
    return (np.asarray(mu_factor) / denom) * np.conj(history), psi


def _resolve_factor(value, frame_index: int):
    """Injected per-frame factors may be constants, arrays or callables."""
    if callable(value):
        return value(frame_index)
    return value


class KalmanGainLaw:
    """Default gain: the closed-form Kalman gain from the filter state."""

    name = "kalman"

    def compute(self, state: FdkfState, params: FdkfParams, error_bins):
        return kalman_gain(state, params)


class FdNlmsGainLaw:
    """Frequency-domain NLMS gain with an injected stepsize source."""

    name = "fd_nlms"

    def __init__(self, stepsize=1.0, regularization: float = 0.0):
        self.stepsize = stepsize
        self.regularization = regularization

    def compute(self, state: FdkfState, params: FdkfParams, error_bins):
        mu = _resolve_factor(self.stepsize, state.frame_count)
        return fd_nlms_gain(state.history, mu, self.regularization)


class VssGainLaw:
    """Variable-stepsize gain law with injected scaling factors.

    Holds the per-bin reference-power recursion state; one instance per
    filter instance.
    """

    name = "vss"

    def __init__(
        self,
        mu_factor=1.0,
        err_factor=1.0,
        forgetting: float = 0.9,
        floor: float = 1e-3,
    ):
        if floor <= 0.0:
            raise ConfigurationError(f"vss floor must be positive, got {floor}")
        self.mu_factor = mu_factor
        self.err_factor = err_factor
        self.forgetting = forgetting
        self.floor = floor
        self._ref_power = 0.0

    def compute(self, state: FdkfState, params: FdkfParams, error_bins):
        gain, self._ref_power = vss_gain(
            state.history,
            error_bins,
            self._ref_power,
            _resolve_factor(self.mu_factor, state.frame_count),
            _resolve_factor(self.err_factor, state.frame_count),
            self.forgetting,
            self.floor,
        )
        return gain


class Fdkf:
    """Frequency-domain adaptive Kalman filter over K bins.

    A filter instance is single-owner: feed it one (microphone, reference)
    frame pair per step. The optional ``echo_truth`` frame switches the
    instance into oracle adaptation: the noise estimate, gain, and filter
    update then run on ``truth - echo_estimate`` while the returned error
    stays ``y - echo_estimate``.
    """

    def __init__(self, num_bins: int, params: FdkfParams | None = None, gain_law=None):
        self.params = params if params is not None else FdkfParams()
        self.state = FdkfState(num_bins, self.params.taps, self.params.initial_p)
        self.gain_law = gain_law if gain_law is not None else KalmanGainLaw()

    def step(self, y_bins, x_bins, transition: float | None = None, echo_truth=None):
        """Process one frame; returns ``(error_bins, echo_estimate_bins)``."""
        params = self.params
        if transition is None:
            a = params.state_transition
        else:
            a = float(transition)
            if not 0.0 <= a <= 1.0:
                raise ConfigurationError(
                    f"per-frame transition must be in [0, 1], got {a}"
                )
        state = self.state
        push_reference(state, x_bins)
        state.frame_count += 1
        power = float(np.mean(np.sum(np.abs(state.history) ** 2, axis=0)))
        state.ref_power_mean += (power - state.ref_power_mean) / state.frame_count

        error, echo = prediction_error(y_bins, state)
        if echo_truth is None:
            adapt_error = error
        else:
            adapt_error = frame_bins(echo_truth) - echo
        if params.valid_error_samples is not None:
            adapt_error = confine_error(adapt_error, params.valid_error_samples)
        state.noise_power = observation_noise_update(
            state.noise_power, adapt_error, params.smoothing
        )
        gain = self.gain_law.compute(state, params, adapt_error)
        prev_taps = state.filter_taps
        state.filter_taps = filter_update(prev_taps, gain, adapt_error, a)
        state.covariance, clamped = covariance_update(
            state.covariance,
            prev_taps,
            state.history,
            gain,
            params.overlap_ratio,
            a,
        )
        state.covariance_clamps += clamped
        return error, echo


class Nlms:
    """Sample-wise NLMS echo canceller with a regularized stepsize.

    The update is ``e = y - x^T w`` followed by
    ``w += mu0 / (||x||^2 + delta) * e * x`` over the N-sample reference
    history. ``0 < mu0 < 2`` is required for stability.
    """

    def __init__(self, length: int, stepsize: float = 1.0, regularization: float = 1e-6):
        if length < 1:
            raise ConfigurationError(f"filter length must be >= 1, got {length}")
        if not 0.0 < stepsize < 2.0:
            raise ConfigurationError(
                f"stepsize must satisfy 0 < mu0 < 2, got {stepsize}"
            )
        if regularization <= 0.0:
            raise ConfigurationError(
                f"regularization must be positive, got {regularization}"
            )
        self.stepsize = stepsize
        self.regularization = regularization
        self.weights = np.zeros(length)
        self._history = np.zeros(length)  # most recent sample first

    @property
    def length(self) -> int:
        return len(self.weights)

    def step(self, x_n: float, y_n: float) -> float:
        """Consume one sample pair, return the error sample."""
        h = self._history
        h[1:] = h[:-1]
        h[0] = x_n
        error = y_n - h @ self.weights
        mu = self.stepsize / (h @ h + self.regularization)
        self.weights = self.weights + (mu * error) * h
        return error

    def run(self, x, y, snapshot_every: int | None = None):
        """Filter whole signals; optionally snapshot the weights.

        Returns ``(error_signal, snapshots)`` where ``snapshots`` is a
        list of weight copies taken every ``snapshot_every`` samples
        (empty when not requested).
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape != y.shape:
            raise ValueError("reference and microphone signals must match in length")
        error = np.empty(len(x))
        snapshots = []
        for n in range(len(x)):
            error[n] = self.step(x[n], y[n])
            if snapshot_every and (n + 1) % snapshot_every == 0:
                snapshots.append(self.weights.copy())
        return error, snapshots
