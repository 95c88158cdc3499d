"""Room temperature/humidity model: base value, daily swing, seeded noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SECONDS_PER_DAY = 86_400.0
TEMP_MIN, TEMP_MAX = -40.0, 80.0  # sensor-class operating range


@dataclass(frozen=True)
class EnvModel:
    base_temperature_c: float = 25.0
    daily_amplitude_c: float = 3.0
    temperature_noise: float = 0.2
    base_humidity_pct: float = 60.0
    daily_amplitude_pct: float = 8.0
    humidity_noise: float = 0.8


@dataclass(frozen=True)
class EnvReading:
    temperature_c: float
    humidity_pct: float
    timestamp: float


def env_tick(model: EnvModel, t: float, rng: np.random.Generator | None = None) -> EnvReading:
    """One sensor reading at wall time ``t`` (seconds). Humidity saturates at
    the physical [0, 100] bounds; temperature at the sensor's range."""
    phase = 2 * np.pi * (t % SECONDS_PER_DAY) / SECONDS_PER_DAY
    temperature = model.base_temperature_c + model.daily_amplitude_c * float(np.sin(phase))
    # Humidity swings opposite the daily temperature cycle.
    humidity = model.base_humidity_pct - model.daily_amplitude_pct * float(np.sin(phase))
    if rng is not None:
        if model.temperature_noise:
            temperature += float(rng.normal(0.0, model.temperature_noise))
        if model.humidity_noise:
            humidity += float(rng.normal(0.0, model.humidity_noise))
    temperature = min(max(temperature, TEMP_MIN), TEMP_MAX)
    humidity = min(max(humidity, 0.0), 100.0)
    return EnvReading(temperature_c=temperature, humidity_pct=humidity, timestamp=t)
