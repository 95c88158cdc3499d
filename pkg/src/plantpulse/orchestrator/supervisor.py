"""Supervised system assembly: start, watch, restart, stop.

Components start strictly in dependency order (broker, meter, then the
publishers and ingest, api last), each behind a readiness gate. A crashed
component is rebuilt and restarted with backoff; more than five restarts
inside a minute marks the whole system failed (exit code 1 at the CLI).
Shutdown runs in reverse order; devices flush their in-flight publish.

By default everything runs in this process as tasks. ``separate=True``
launches each component as its own OS process running ``plantpulse run
--only <name>``, wired together through the same config file; the
behavior contract is identical either way.
"""

from __future__ import annotations

import asyncio
import json
import logging
import sys
import time
from collections import deque
from pathlib import Path

import httpx
import numpy as np

from ..api.auth import AuthStore, LoginRateLimiter, SessionManager
from ..api.runner import ApiServer
from ..api.server import create_app
from ..ingest.service import IngestService
from ..ingest.store import SegmentStore, StoreFollower
from ..meters.devices import (
    EnvironmentDevice,
    Esp32EnergyDevice,
    IndustrialBridgeDevice,
    MeterModel,
)
from ..meters.environment import EnvModel
from ..meters.waveform import WaveformParams
from ..modbus.client import ModbusClient
from ..modbus.emulator import MeterEmulator
from ..modbus.registers import RegisterMap
from ..mqtt.broker import Broker, BrokerConfig
from ..mqtt.client import ClientOptions, MqttClient
from .config import SystemConfig, _parse_bind

logger = logging.getLogger(__name__)

COMPONENT_ORDER = ("broker", "meter", "bridge", "esp32", "env", "ingest", "api")
START_TIMEOUT = 10.0
RESTART_WINDOW = 60.0
MAX_RESTARTS_PER_WINDOW = 5


class StartupTimeout(Exception):
    pass


class Component:
    """One supervised unit: allocate in start(), run tasks(), free in stop()."""

    name = "component"

    def __init__(self, supervisor: "Supervisor"):
        self.supervisor = supervisor
        self.config = supervisor.config

    async def start(self) -> None:
        raise NotImplementedError

    def tasks(self) -> list:
        return []

    async def stop(self) -> None:
        pass

    def _client_options(self, client_id: str) -> ClientOptions:
        host, port = self.supervisor.broker_address()
        return ClientOptions(
            host=host, port=port, client_id=client_id,
            default_qos=self.config.devices.qos,
        )

    async def _connect_mqtt(self, client_id: str) -> MqttClient:
        client = MqttClient(self._client_options(client_id))
        try:
            await client.connect()
        except Exception as e:
            # background retry continues; publishes buffer meanwhile
            logger.warning("event=initial_connect_failed client_id=%s detail=%s",
                           client_id, e)
        return client


class BrokerComponent(Component):
    name = "broker"

    async def start(self) -> None:
        host, port = _parse_bind(self.config.broker.bind)
        self.broker = Broker(BrokerConfig(
            host=host, port=port,
            in_flight_limit=self.config.broker.in_flight_limit,
            max_payload=self.config.broker.max_payload,
            keep_alive_grace=self.config.broker.keep_alive_grace,
            max_connections=self.config.broker.max_connections,
            retry_interval=self.config.broker.retry_interval,
        ))
        self.supervisor.shared["broker_address"] = await self.broker.start()

    async def stop(self) -> None:
        await self.broker.stop()


class MeterComponent(Component):
    name = "meter"

    async def start(self) -> None:
        host, port = _parse_bind(self.config.meter.bind)
        meter = self.config.meter
        self.bank = RegisterMap()
        self.model = MeterModel(
            self.bank,
            base_power_kw=meter.base_power_kw, swing_kw=meter.swing_kw,
            noise_kw=meter.noise_kw, voltage_v=meter.voltage_v,
            power_factor=meter.power_factor, period=meter.update_period,
            rng=self.supervisor.rng("meter"),
        )
        self.emulator = MeterEmulator(self.bank, unit_id=meter.unit_id,
                                      host=host, port=port)
        self.supervisor.shared["meter_address"] = await self.emulator.start()

    def tasks(self):
        return [self.model.run()]

    async def stop(self) -> None:
        await self.emulator.stop()


class BridgeComponent(Component):
    name = "bridge"

    async def start(self) -> None:
        host, port = self.supervisor.meter_address()
        self.mqtt = await self._connect_mqtt("bridge-industrial")
        self.device = IndustrialBridgeDevice(
            self.mqtt,
            self.config.devices.topics["industrial"],
            self.config.devices.periods["industrial"],
            ModbusClient(host, port, unit_id=self.config.meter.unit_id),
            qos=self.config.devices.qos,
        )

    def tasks(self):
        return [self.device.run()]

    async def stop(self) -> None:
        await self.device.modbus.close()
        await self.mqtt.close()


class Esp32Component(Component):
    name = "esp32"

    async def start(self) -> None:
        wf = self.config.devices.waveform
        self.mqtt = await self._connect_mqtt("esp32-energy")
        self.device = Esp32EnergyDevice(
            self.mqtt,
            self.config.devices.topics["esp32"],
            self.config.devices.periods["esp32"],
            WaveformParams(
                v_peak=wf.v_peak, i_peak=wf.i_peak, frequency=wf.frequency,
                phase_lag=wf.phase_lag, noise_stddev=wf.noise_stddev,
                drift_amplitude=wf.drift_amplitude, drift_period=wf.drift_period,
            ),
            scale_v=wf.scale_v, scale_i=wf.scale_i,
            sample_rate=wf.sample_rate, cycles=wf.cycles,
            rng=self.supervisor.rng("esp32"),
            qos=self.config.devices.qos,
        )

    def tasks(self):
        return [self.device.run()]

    async def stop(self) -> None:
        await self.mqtt.close()


class EnvComponent(Component):
    name = "env"

    async def start(self) -> None:
        em = self.config.devices.environment_model
        self.mqtt = await self._connect_mqtt("env-room1")
        self.device = EnvironmentDevice(
            self.mqtt,
            self.config.devices.topics["environment"],
            self.config.devices.periods["environment"],
            EnvModel(
                base_temperature_c=em.base_temperature_c,
                daily_amplitude_c=em.daily_amplitude_c,
                temperature_noise=em.temperature_noise,
                base_humidity_pct=em.base_humidity_pct,
                daily_amplitude_pct=em.daily_amplitude_pct,
                humidity_noise=em.humidity_noise,
            ),
            rng=self.supervisor.rng("env"),
            qos=self.config.devices.qos,
        )

    def tasks(self):
        return [self.device.run()]

    async def stop(self) -> None:
        await self.mqtt.close()


class IngestComponent(Component):
    name = "ingest"

    async def start(self) -> None:
        self.store = SegmentStore(
            self.config.data_dir,
            roll_bytes=self.config.ingest.segment_roll_bytes,
            fsync=self.config.ingest.fsync,
        )
        self.supervisor.shared["store"] = self.store
        self.mqtt = await self._connect_mqtt("ingest-subscriber")
        self.service = IngestService(
            self.store, self.mqtt,
            subscription_filter=self.config.ingest.subscription_filter,
            topic_map=self.config.topic_map(),
        )
        await self.service.start()

    async def stop(self) -> None:
        await self.mqtt.close()
        self.store.close()
        self.supervisor.shared.pop("store", None)


class ApiComponent(Component):
    name = "api"

    async def start(self) -> None:
        host, port = _parse_bind(self.config.api.bind)
        store = self.supervisor.shared.get("store")
        self.follower = None
        if store is None:
            # api running apart from ingest: tail the data directory
            self.follower = StoreFollower(self.config.data_dir)
            reader = self.follower
        else:
            reader = store
        users_file = self.config.data_dir / "users.json"
        if users_file.is_file():
            auth = AuthStore.load(users_file)
        else:
            auth = AuthStore.from_entries(
                self.config.api.users,
                iterations=self.config.api.password_iterations,
            )
        app = create_app(
            reader, auth,
            sessions=SessionManager(ttl_seconds=self.config.api.token_ttl_hours * 3600),
            limiter=LoginRateLimiter(),
            cors_origins=tuple(self.config.api.cors_origins),
            health=self.supervisor.health_snapshot,
        )
        self.server = ApiServer(app, host=host, port=port)
        actual = await self.server.start()
        self.supervisor.shared["api_address"] = actual
        async with httpx.AsyncClient() as probe:
            response = await probe.get(f"http://{actual[0]}:{actual[1]}/healthz")
            response.raise_for_status()

    async def stop(self) -> None:
        await self.server.stop()
        if self.follower is not None:
            self.follower.close()
        self.supervisor.shared.pop("api_address", None)


_COMPONENT_TYPES = {
    cls.name: cls
    for cls in (BrokerComponent, MeterComponent, BridgeComponent,
                Esp32Component, EnvComponent, IngestComponent, ApiComponent)
}


class Supervisor:
    def __init__(self, config: SystemConfig, components: list[str] | None = None):
        selected = list(components) if components is not None else list(COMPONENT_ORDER)
        unknown = set(selected) - set(COMPONENT_ORDER)
        if unknown:
            raise ValueError(f"unknown components: {sorted(unknown)}")
        self.config = config
        self.selected = [name for name in COMPONENT_ORDER if name in selected]
        self.shared: dict = {}
        self.health: dict[str, str] = {}
        self.live: dict[str, Component] = {}
        self.failed = asyncio.Event()
        self._stopping = False
        self._monitors: dict[str, asyncio.Task] = {}
        self._ready_events: dict[str, asyncio.Event] = {}
        self._seed_counter = 0

    # -- shared context ---------------------------------------------------------

    _RNG_OFFSETS = {"meter": 1, "esp32": 2, "env": 3}

    def rng(self, label: str) -> np.random.Generator:
        seed = self.config.devices.seed
        if seed is None:
            return np.random.default_rng()
        return np.random.default_rng(seed + self._RNG_OFFSETS.get(label, 0))

    def broker_address(self) -> tuple[str, int]:
        if "broker_address" in self.shared:
            return self.shared["broker_address"]
        return _parse_bind(self.config.broker.bind)

    def meter_address(self) -> tuple[str, int]:
        if "meter_address" in self.shared:
            return self.shared["meter_address"]
        return _parse_bind(self.config.meter.bind)

    def api_address(self) -> tuple[str, int]:
        if "api_address" in self.shared:
            return self.shared["api_address"]
        return _parse_bind(self.config.api.bind)

    def health_snapshot(self) -> dict[str, str]:
        snapshot = dict(self.health)
        ingest = self.live.get("ingest")
        if ingest is not None and hasattr(ingest, "service"):
            snapshot["ingest_detail"] = json.dumps(ingest.service.health())
        return snapshot

    # -- lifecycle ---------------------------------------------------------------

    async def start(self) -> None:
        """Bring every selected component up, in order, each gated on ready."""
        for name in self.selected:
            ready = asyncio.Event()
            self._ready_events[name] = ready
            self._monitors[name] = asyncio.create_task(
                self._run_component(name, ready), name=f"supervise-{name}"
            )
            gates = [asyncio.create_task(ready.wait()),
                     asyncio.create_task(self.failed.wait())]
            done, pending = await asyncio.wait(
                gates, timeout=START_TIMEOUT, return_when=asyncio.FIRST_COMPLETED
            )
            for task in pending:
                task.cancel()
            if self.failed.is_set():
                await self.stop()
                raise StartupTimeout(f"component {name} failed to start")
            if not ready.is_set():
                await self.stop()
                raise StartupTimeout(f"component {name} not ready within {START_TIMEOUT}s")
        logger.info("event=system_up components=%s", ",".join(self.selected))

    async def _run_component(self, name: str, ready: asyncio.Event) -> None:
        factory = _COMPONENT_TYPES[name]
        restarts: deque[float] = deque()
        first = True
        while not self._stopping:
            component = factory(self)
            tasks: list[asyncio.Task] = []
            try:
                await asyncio.wait_for(component.start(), START_TIMEOUT)
                self.live[name] = component
                self.health[name] = "up"
                if first:
                    first = False
                    ready.set()
                logger.info("event=component_up name=%s", name)
                tasks = [asyncio.create_task(coro) for coro in component.tasks()]
                if tasks:
                    done, _ = await asyncio.wait(tasks, return_when=asyncio.FIRST_EXCEPTION)
                    for task in done:
                        task.result()  # propagate the crash
                    raise RuntimeError(f"component {name} task exited unexpectedly")
                await asyncio.Event().wait()  # passive component: park until cancelled
            except asyncio.CancelledError:
                await self._teardown(name, component, tasks)
                raise
            except Exception as e:
                logger.error("event=component_crashed name=%s detail=%s", name, e)
                self.health[name] = "crashed"
                await self._teardown(name, component, tasks)
                if first:
                    first = False
                    self.failed.set()
                    return
                now = time.monotonic()
                restarts.append(now)
                while restarts and now - restarts[0] > RESTART_WINDOW:
                    restarts.popleft()
                if len(restarts) > MAX_RESTARTS_PER_WINDOW:
                    logger.error("event=crash_loop name=%s", name)
                    self.failed.set()
                    return
                await asyncio.sleep(min(0.2 * 2 ** len(restarts), 5.0))

    async def _teardown(self, name: str, component: Component,
                        tasks: list[asyncio.Task]) -> None:
        for task in tasks:
            task.cancel()
        for task in tasks:
            try:
                await task
            except (asyncio.CancelledError, Exception):
                pass
        try:
            await component.stop()
        except Exception as e:
            logger.warning("event=stop_failed name=%s detail=%s", name, e)
        self.live.pop(name, None)
        if self.health.get(name) == "up":
            self.health[name] = "stopped"

    async def stop(self) -> None:
        self._stopping = True
        for name in reversed(self.selected):
            monitor = self._monitors.pop(name, None)
            if monitor is None:
                continue
            monitor.cancel()
            try:
                await monitor
            except asyncio.CancelledError:
                pass
        logger.info("event=system_stopped")

    async def wait(self) -> int:
        """Block until failure (1) or external stop (0)."""
        await self.failed.wait()
        return 1


async def run_system(config: SystemConfig, components: list[str] | None = None,
                     *, stop_signal: asyncio.Event | None = None) -> int:
    """Run until the stop signal fires or a component crash-loops."""
    supervisor = Supervisor(config, components)
    try:
        await supervisor.start()
    except StartupTimeout as e:
        logger.error("event=startup_failed detail=%s", e)
        return 1
    stop_signal = stop_signal or asyncio.Event()
    stop_task = asyncio.create_task(stop_signal.wait())
    failed_task = asyncio.create_task(supervisor.failed.wait())
    done, pending = await asyncio.wait(
        [stop_task, failed_task], return_when=asyncio.FIRST_COMPLETED
    )
    for task in pending:
        task.cancel()
    exit_code = 1 if supervisor.failed.is_set() else 0
    await supervisor.stop()
    return exit_code


# --------------------------------------------------------------------------
# Separate-process mode: each component is `plantpulse run --only X` child.
# --------------------------------------------------------------------------


async def _probe_port(host: str, port: int) -> bool:
    try:
        _, writer = await asyncio.open_connection(host, port)
    except OSError:
        return False
    writer.close()
    return True


class ProcessSupervisor:
    """Same supervision contract, with OS processes instead of tasks."""

    def __init__(self, config: SystemConfig, config_path: str | Path,
                 components: list[str] | None = None):
        selected = list(components) if components is not None else list(COMPONENT_ORDER)
        self.config = config
        self.config_path = str(config_path)
        self.selected = [name for name in COMPONENT_ORDER if name in selected]
        self.failed = asyncio.Event()
        self._stopping = False
        self._monitors: dict[str, asyncio.Task] = {}

    def _probe_target(self, name: str) -> tuple[str, int] | None:
        if name == "broker":
            return _parse_bind(self.config.broker.bind)
        if name == "meter":
            return _parse_bind(self.config.meter.bind)
        if name == "api":
            return _parse_bind(self.config.api.bind)
        return None

    async def _wait_ready(self, name: str, process: asyncio.subprocess.Process) -> None:
        target = self._probe_target(name)
        deadline = time.monotonic() + START_TIMEOUT
        while time.monotonic() < deadline:
            if process.returncode is not None:
                raise StartupTimeout(f"{name} exited with {process.returncode} at startup")
            if target is None:
                await asyncio.sleep(0.5)  # devices/ingest: alive is ready
                return
            if await _probe_port(*target):
                return
            await asyncio.sleep(0.1)
        raise StartupTimeout(f"{name} not ready within {START_TIMEOUT}s")

    async def _spawn(self, name: str) -> asyncio.subprocess.Process:
        return await asyncio.create_subprocess_exec(
            sys.executable, "-m", "plantpulse", "run",
            "--only", name, "--config", self.config_path,
        )

    async def start(self) -> None:
        for name in self.selected:
            process = await self._spawn(name)
            try:
                await self._wait_ready(name, process)
            except StartupTimeout:
                process.terminate()
                await self.stop()
                raise
            self._monitors[name] = asyncio.create_task(self._watch(name, process))
            logger.info("event=child_up name=%s pid=%d", name, process.pid)

    async def _watch(self, name: str, process: asyncio.subprocess.Process) -> None:
        restarts: deque[float] = deque()
        try:
            while not self._stopping:
                code = await process.wait()
                if self._stopping:
                    return
                logger.error("event=child_exited name=%s code=%s", name, code)
                now = time.monotonic()
                restarts.append(now)
                while restarts and now - restarts[0] > RESTART_WINDOW:
                    restarts.popleft()
                if len(restarts) > MAX_RESTARTS_PER_WINDOW:
                    logger.error("event=crash_loop name=%s", name)
                    self.failed.set()
                    return
                await asyncio.sleep(min(0.2 * 2 ** len(restarts), 5.0))
                process = await self._spawn(name)
        finally:
            if process.returncode is None:
                process.terminate()
                try:
                    await asyncio.wait_for(process.wait(), 5.0)
                except asyncio.TimeoutError:
                    process.kill()

    async def stop(self) -> None:
        self._stopping = True
        for name in reversed(self.selected):
            monitor = self._monitors.pop(name, None)
            if monitor is None:
                continue
            monitor.cancel()
            try:
                await monitor
            except asyncio.CancelledError:
                pass


async def run_system_processes(config: SystemConfig, config_path: str | Path,
                               components: list[str] | None = None,
                               *, stop_signal: asyncio.Event | None = None) -> int:
    supervisor = ProcessSupervisor(config, config_path, components)
    try:
        await supervisor.start()
    except StartupTimeout as e:
        logger.error("event=startup_failed detail=%s", e)
        await supervisor.stop()
        return 1
    stop_signal = stop_signal or asyncio.Event()
    stop_task = asyncio.create_task(stop_signal.wait())
    failed_task = asyncio.create_task(supervisor.failed.wait())
    done, pending = await asyncio.wait(
        [stop_task, failed_task], return_when=asyncio.FIRST_COMPLETED
    )
    for task in pending:
        task.cancel()
    exit_code = 1 if supervisor.failed.is_set() else 0
    await supervisor.stop()
    return exit_code
