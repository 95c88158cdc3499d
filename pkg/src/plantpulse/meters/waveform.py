"""Synthetic AC waveforms and the RMS/power math run on them.

Windows always span a whole number of mains cycles, which kills the
spectral-leakage bias that a fractional cycle would put into the RMS and
active-power means. Defaults: 10 cycles sampled at 2 kHz.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np


class EmptyWindow(ValueError):
    """Power math needs at least one sample."""


@dataclass(frozen=True)
class WaveformParams:
    v_peak: float
    i_peak: float
    frequency: float = 50.0
    phase_lag: float = 0.0  # radians; current lags voltage
    noise_stddev: float = 0.01  # fraction of each peak
    drift_amplitude: float = 0.0  # fraction of each peak
    drift_period: float = 60.0  # seconds

    def __post_init__(self):
        if self.v_peak < 0 or self.i_peak < 0:
            raise ValueError("peaks must be non-negative")
        if not 0 <= self.phase_lag < 2 * math.pi:
            raise ValueError("phase lag must be in [0, 2*pi)")
        if self.frequency <= 0:
            raise ValueError("frequency must be positive")


@dataclass(frozen=True)
class WaveformWindow:
    sample_rate: float
    samples_v: np.ndarray
    samples_i: np.ndarray

    def __post_init__(self):
        if len(self.samples_v) != len(self.samples_i):
            raise ValueError("voltage and current arrays must be equal length")


@dataclass(frozen=True)
class PowerReading:
    v_rms: float
    i_rms: float
    p_active: float
    s_apparent: float
    power_factor: float
    timestamp: float


def synth_window(
    params: WaveformParams,
    t0: float,
    *,
    sample_rate: float = 2000.0,
    cycles: int = 10,
    rng: np.random.Generator | None = None,
) -> WaveformWindow:
    """Sample v(t) = Vp sin(2*pi*f*t) and i(t) = Ip sin(2*pi*f*t - phi)
    over a whole number of cycles, with optional Gaussian noise and a slow
    sinusoidal drift of both peaks."""
    n = round(sample_rate * cycles / params.frequency)
    t = t0 + np.arange(n) / sample_rate
    omega = 2 * math.pi * params.frequency
    drift = 1.0
    if params.drift_amplitude:
        drift = 1.0 + params.drift_amplitude * np.sin(2 * math.pi * t / params.drift_period)
    v = params.v_peak * drift * np.sin(omega * t)
    i = params.i_peak * drift * np.sin(omega * t - params.phase_lag)
    if params.noise_stddev:
        if rng is None:
            rng = np.random.default_rng()
        v = v + rng.normal(0.0, params.noise_stddev * params.v_peak, n)
        i = i + rng.normal(0.0, params.noise_stddev * params.i_peak, n)
    return WaveformWindow(sample_rate=sample_rate, samples_v=v, samples_i=i)


def compute_power(window: WaveformWindow, *, timestamp: float | None = None) -> PowerReading:
    """RMS, active and apparent power, and power factor for one window."""
    v = np.asarray(window.samples_v, dtype=np.float64)
    i = np.asarray(window.samples_i, dtype=np.float64)
    if v.size == 0:
        raise EmptyWindow("window has no samples")
    v_rms = float(np.sqrt(np.mean(v * v)))
    i_rms = float(np.sqrt(np.mean(i * i)))
    p_active = float(np.mean(v * i))
    s_apparent = v_rms * i_rms
    power_factor = p_active / s_apparent if s_apparent > 0 else 0.0
    return PowerReading(
        v_rms=v_rms,
        i_rms=i_rms,
        p_active=p_active,
        s_apparent=s_apparent,
        power_factor=power_factor,
        timestamp=time.time() if timestamp is None else timestamp,
    )
