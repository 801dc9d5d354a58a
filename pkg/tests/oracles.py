"""Independent reference implementations used as test oracles.

Everything here is written as plain loops over scalars, deliberately
sharing no code with the package, so agreement between the two is a real
check and not a tautology.
"""

import numpy as np


def naive_dft(samples):
    """O(K^2) forward DFT, bin k = sum_n x[n] exp(-2j pi k n / K)."""
    samples = np.asarray(samples)
    size = len(samples)
    out = np.empty(size, dtype=complex)
    for k in range(size):
        acc = 0.0 + 0.0j
        for n in range(size):
            acc += samples[n] * np.exp(-2j * np.pi * k * n / size)
        out[k] = acc
    return out


def direct_convolution(x, h):
    """Direct time-domain convolution, same length as x."""
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    out = np.zeros(len(x))
    for n in range(len(x)):
        acc = 0.0
        for nu in range(min(len(h), n + 1)):
            acc += h[nu] * x[n - nu]
        out[n] = acc
    return out


class ScalarKalman:
    """One-dimensional (complex) Kalman recursion for a single latent
    coefficient: prediction/correction with transition factor ``a``,
    observation noise ``sigma_sq`` given per step, and process noise
    computed as (p + |h_prev|^2) * (1 - a^2)."""

    def __init__(self, a, p0=1.0):
        self.a = a
        self.h = 0.0 + 0.0j
        self.p = float(p0)

    def step(self, x, y, sigma_sq):
        e = y - x * self.h
        denom = (x.conjugate() * x).real * self.p + sigma_sq
        k = self.p * x.conjugate() / denom if denom > 0.0 else 0.0
        h_plus = self.h + k * e
        process_noise = (self.p + abs(self.h) ** 2) * (1.0 - self.a**2)
        p_plus = (1.0 - (k * x).real) * self.p
        self.h = self.a * h_plus
        self.p = self.a**2 * p_plus + process_noise
        return e


class TranscribedFdkf:
    """Literal per-bin transcription of the frame-domain recursion:
    error, gain with overlap ratio rho, noise estimate with smoothing
    beta, state update, covariance propagation. Single tap, plain loops.
    """

    def __init__(self, num_bins, a=0.999, beta=0.5, rho=1.0, p0=1.0):
        self.a = a
        self.beta = beta
        self.rho = rho
        self.h = np.zeros(num_bins, dtype=complex)
        self.p = np.full(num_bins, float(p0))
        self.psi = np.zeros(num_bins)

    def step(self, x_bins, y_bins):
        a, beta, rho = self.a, self.beta, self.rho
        errors = np.empty(len(self.h), dtype=complex)
        for k in range(len(self.h)):
            x = x_bins[k]
            y = y_bins[k]
            h_prev = self.h[k]
            e = y - x * h_prev
            self.psi[k] = beta * self.psi[k] + (1.0 - beta) * abs(e) ** 2
            denom = rho * self.p[k] * abs(x) ** 2 + self.psi[k]
            gain = rho * self.p[k] * x.conjugate() / denom if denom > 0.0 else 0.0
            self.h[k] = a * h_prev + a * gain * e
            drift = (self.p[k] + abs(h_prev) ** 2) * (1.0 - a * a)
            self.p[k] = a * a * self.p[k] * (1.0 - rho * (x * gain).real) + drift
            errors[k] = e
        return errors
