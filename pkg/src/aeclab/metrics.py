"""Objective evaluation: time-resolved ERLE, normalized misalignment, and
the logarithmic residual-energy score, plus section-wise aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from . import framing


@dataclass(frozen=True)
class ErleConfig:
    """Echo-return-loss-enhancement smoothing and reporting limits.

    ``floor=None`` selects an adaptive power floor of ``floor_scale``
    times the peak instantaneous echo power, keeping the log finite on
    silence without biasing active segments.
    """

    smoothing: float = 0.99
    floor: float | None = None
    floor_scale: float = 1e-12
    cap_db: float = 120.0

    def __post_init__(self):
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError(f"smoothing must be in [0, 1), got {self.smoothing}")
        if self.floor is not None and self.floor <= 0.0:
            raise ValueError(f"floor must be positive, got {self.floor}")


def _iir_smooth(values: np.ndarray, coefficient: float) -> np.ndarray:
    # m(n) = a*m(n-1) + (1-a)*v(n); the (1-a) factor cancels in ratios.
    return lfilter([1.0 - coefficient], [1.0, -coefficient], values)


def erle(echo, echo_estimate, config: ErleConfig | None = None) -> np.ndarray:
    """Per-sample ERLE trace in dB.

    ``10*log10(E{d^2} / E{(d - d_hat)^2})`` with the expectations
    realized by a first-order IIR smoother. Both powers are floored and
    the trace is capped at ``cap_db``.
    """
    cfg = config if config is not None else ErleConfig()
    d = np.asarray(echo, dtype=float)
    d_hat = np.asarray(echo_estimate, dtype=float)
    if d.shape != d_hat.shape:
        raise ValueError(
            f"echo and estimate lengths differ: {d.shape} vs {d_hat.shape}"
        )
    if cfg.floor is not None:
        floor = cfg.floor
    else:
        peak = float(np.max(d**2)) if len(d) else 0.0
        floor = cfg.floor_scale * peak if peak > 0.0 else 1e-30
    num_raw = _iir_smooth(d**2, cfg.smoothing)
    den_raw = _iir_smooth((d - d_hat) ** 2, cfg.smoothing)
    num = np.maximum(num_raw, floor)
    den = np.maximum(den_raw, floor)
    trace = np.minimum(10.0 * np.log10(num / den), cfg.cap_db)
    # residual at the floor with live echo: unmeasurably good, report the cap
    trace[(den_raw <= floor) & (num_raw > floor)] = cfg.cap_db
    return trace


def misalignment_db(h_true, h_estimate, floor_db: float = -120.0) -> float:
    """Normalized system distance ``10*log10(||h - h_hat||^2 / ||h||^2)``.

    Responses of different lengths are compared over the longer support
    (the shorter one zero-padded). The value is floored at ``floor_db``.
    """
    h = np.asarray(h_true, dtype=float)
    g = np.asarray(h_estimate, dtype=float)
    size = max(len(h), len(g))
    h = np.pad(h, (0, size - len(h)))
    g = np.pad(g, (0, size - len(g)))
    den = float(np.sum(h**2))
    if den == 0.0:
        return 0.0 if np.any(g) else floor_db
    value = 10.0 * np.log10(max(float(np.sum((h - g) ** 2)) / den, 1e-300))
    return max(value, floor_db)


def misalignment(h_true, filter_taps, config: framing.FrameConfig, floor_db: float = -120.0):
    """Misalignment of a per-bin filter state against a true response.

    The (taps, K) filter state is converted to its equivalent time-domain
    response first. A true response longer than the modelled span is
    compared truncated; the flag in the returned ``(value_db, truncated)``
    pair reports that.
    """
    h_hat = framing.equivalent_impulse_response(filter_taps, config)
    h = np.asarray(h_true, dtype=float)
    truncated = len(h) > len(h_hat)
    if truncated:
        h = h[: len(h_hat)]
    return misalignment_db(h, h_hat, floor_db), truncated


def log_mse(error, near_speech, noise, floor: float = 1e-30) -> float:
    """Logarithmic residual energy ``10*log10(sum (e - s - n)^2)``, floored."""
    e = np.asarray(error, dtype=float)
    s = np.asarray(near_speech, dtype=float)
    n = np.asarray(noise, dtype=float)
    if not (e.shape == s.shape == n.shape):
        raise ValueError("error, near speech, and noise lengths must match")
    residual = e - s - n
    return 10.0 * np.log10(max(float(np.sum(residual**2)), floor))


def aggregate_sections(
    trace,
    sections,
    rate: float,
    warmup: float = 0.25,
    final_window: float = 1.0,
) -> list[dict]:
    """Mean and final-window mean of a trace per section.

    ``sections`` is an iterable of ``(kind, start, stop)`` in trace
    indices; ``rate`` is the trace sampling rate used to convert the
    warm-up and final-window durations. Sections whose warm-up swallows
    all samples are flagged empty.
    """
    trace = np.asarray(trace, dtype=float)
    out = []
    skip = int(round(warmup * rate))
    tail = max(int(round(final_window * rate)), 1)
    for kind, start, stop in sections:
        start = int(start)
        stop = min(int(stop), len(trace))
        begin = start + skip
        entry = {"kind": kind, "start": start, "stop": stop, "empty": False}
        segment = trace[begin:stop]
        if segment.size == 0:
            entry.update({"empty": True, "mean": None, "final_mean": None})
        else:
            final = trace[max(stop - tail, begin) : stop]
            entry["mean"] = float(np.mean(segment))
            entry["final_mean"] = float(np.mean(final))
        out.append(entry)
    return out
