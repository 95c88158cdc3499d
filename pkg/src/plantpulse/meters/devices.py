"""The three plant devices as periodic publisher tasks.

Each device computes one reading per period and publishes it as UTF-8 JSON
on its topic. The loop is deadline-based, so a slow tick does not smear
the cadence; clock and sleep are injectable for virtual-time tests.
"""

from __future__ import annotations

import asyncio
import json
import logging
import time

import numpy as np

from ..modbus.client import ModbusClient, PollFailed, registers_to_floats
from ..modbus.registers import METER_LAYOUT
from ..mqtt.client import MqttClient
from .environment import EnvModel, env_tick
from .waveform import WaveformParams, WaveformWindow, compute_power, synth_window

logger = logging.getLogger(__name__)

DEVICE_KINDS = ("industrial", "esp32", "environment")


class PeriodicDevice:
    """Base loop: tick, publish, sleep to the next deadline.

    Cancellation is the shutdown signal; the in-flight publish gets up to
    two seconds to flush before the task ends.
    """

    name = "device"

    def __init__(self, mqtt: MqttClient, topic: str, period: float, *,
                 qos: int = 1, clock=time.time, sleep=asyncio.sleep):
        if period <= 0:
            raise ValueError("period must be positive")
        self.mqtt = mqtt
        self.topic = topic
        self.period = period
        self.qos = qos
        self.clock = clock
        self.sleep = sleep
        self.publish_count = 0
        self.error_count = 0
        self.last_payload: dict | None = None
        self._inflight = None

    async def tick(self) -> dict | None:
        raise NotImplementedError

    async def run(self) -> None:
        next_deadline = self.clock()
        try:
            while True:
                next_deadline += self.period
                try:
                    payload = await self.tick()
                except PollFailed as e:
                    self.error_count += 1
                    logger.warning("event=poll_failed device=%s detail=%s", self.name, e)
                    payload = None
                if payload is not None:
                    data = json.dumps(payload).encode("utf-8")
                    self._inflight = self.mqtt.publish(self.topic, data, qos=self.qos)
                    self.last_payload = payload
                    self.publish_count += 1
                await self.sleep(max(0.0, next_deadline - self.clock()))
        except asyncio.CancelledError:
            await self._flush()
            raise

    async def _flush(self) -> None:
        if self._inflight is not None and not self._inflight.done:
            try:
                await self._inflight.wait(timeout=2.0)
            except asyncio.TimeoutError:
                logger.warning("event=flush_timeout device=%s", self.name)


class MeterModel:
    """Drives the emulated meter's register bank: a pump drawing ~0.95 kW.

    Three-phase current follows from P = sqrt(3) * V * I * pf. The slow
    swing plus seeded noise lands displayed power in the 0.95..0.96 band.
    """

    def __init__(self, bank, *, base_power_kw: float = 0.955,
                 swing_kw: float = 0.006, noise_kw: float = 0.002,
                 voltage_v: float = 415.0, power_factor: float = 0.95,
                 period: float = 1.0, rng: np.random.Generator | None = None,
                 clock=time.time, sleep=asyncio.sleep):
        self.bank = bank
        self.base_power_kw = base_power_kw
        self.swing_kw = swing_kw
        self.noise_kw = noise_kw
        self.voltage_v = voltage_v
        self.power_factor = power_factor
        self.period = period
        self.rng = rng if rng is not None else np.random.default_rng()
        self.clock = clock
        self.sleep = sleep
        self.update(self.clock())

    def update(self, t: float) -> None:
        power = self.base_power_kw + self.swing_kw * float(np.sin(2 * np.pi * t / 300.0))
        if self.noise_kw:
            power += float(self.rng.normal(0.0, self.noise_kw))
        voltage = self.voltage_v + float(self.rng.normal(0.0, 0.5)) if self.noise_kw else self.voltage_v
        current = power * 1000.0 / (np.sqrt(3.0) * voltage * self.power_factor)
        self.bank.set_value("power_kw", power)
        self.bank.set_value("voltage_v", voltage)
        self.bank.set_value("current_a", float(current))
        self.bank.set_value("power_factor", self.power_factor)

    async def run(self) -> None:
        while True:
            await self.sleep(self.period)
            self.update(self.clock())


class Esp32EnergyDevice(PeriodicDevice):
    """Samples a synthetic AC waveform and publishes Vrms/Irms.

    ``scale_v``/``scale_i`` mirror the transformer calibration constants a
    hardware build would apply to raw ADC counts.
    """

    name = "esp32"

    def __init__(self, mqtt: MqttClient, topic: str, period: float,
                 params: WaveformParams, *, scale_v: float = 1.0, scale_i: float = 1.0,
                 sample_rate: float = 2000.0, cycles: int = 10,
                 rng: np.random.Generator | None = None, **kw):
        super().__init__(mqtt, topic, period, **kw)
        self.params = params
        self.scale_v = scale_v
        self.scale_i = scale_i
        self.sample_rate = sample_rate
        self.cycles = cycles
        self.rng = rng if rng is not None else np.random.default_rng()

    async def tick(self) -> dict:
        now = self.clock()
        window = synth_window(
            self.params, now, sample_rate=self.sample_rate,
            cycles=self.cycles, rng=self.rng,
        )
        if self.scale_v != 1.0 or self.scale_i != 1.0:
            window = WaveformWindow(
                sample_rate=window.sample_rate,
                samples_v=window.samples_v * self.scale_v,
                samples_i=window.samples_i * self.scale_i,
            )
        reading = compute_power(window, timestamp=now)
        return {
            "voltage": round(reading.v_rms, 4),
            "current": round(reading.i_rms, 6),
            "ts": int(now * 1000),
        }


class EnvironmentDevice(PeriodicDevice):
    """Temperature/humidity sensor at 0.1-unit reporting resolution."""

    name = "environment"

    def __init__(self, mqtt: MqttClient, topic: str, period: float,
                 model: EnvModel, *, rng: np.random.Generator | None = None, **kw):
        super().__init__(mqtt, topic, period, **kw)
        self.model = model
        self.rng = rng if rng is not None else np.random.default_rng()

    async def tick(self) -> dict:
        now = self.clock()
        reading = env_tick(self.model, now, self.rng)
        return {
            "temperature_c": round(reading.temperature_c, 1),
            "humidity_pct": round(reading.humidity_pct, 1),
            "ts": int(now * 1000),
        }


class IndustrialBridgeDevice(PeriodicDevice):
    """Polls the meter's registers and republishes the power reading.

    Voltage, current, and power factor are read too (they drive the health
    log), but the published record carries only the power figure, matching
    the industrial stream's schema. Published values are the decoded floats,
    bit-exact with the register bank.
    """

    name = "industrial"

    def __init__(self, mqtt: MqttClient, topic: str, period: float,
                 modbus: ModbusClient, **kw):
        super().__init__(mqtt, topic, period, **kw)
        self.modbus = modbus
        self.last_reading: dict[str, float] = {}

    async def tick(self) -> dict:
        reading = {}
        for spec in METER_LAYOUT:
            registers = await self.modbus.read_holding(spec.address, spec.width)
            reading[spec.name] = registers_to_floats(registers)[0]
        self.last_reading = reading
        logger.debug(
            "event=meter_poll power_kw=%.6f voltage_v=%.2f current_a=%.3f pf=%.3f",
            reading["power_kw"], reading["voltage_v"],
            reading["current_a"], reading["power_factor"],
        )
        return {"power_kw": reading["power_kw"], "ts": int(self.clock() * 1000)}
