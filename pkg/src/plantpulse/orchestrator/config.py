"""System configuration: one JSON file drives every component.

Validation is exhaustive, not fail-fast: a bad file reports every problem
it contains in one pass. ``PLANTPULSE_DATA_DIR`` overrides the configured
data directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from ..mqtt import codec
from ..api.auth import ROLES

DATA_DIR_ENV = "PLANTPULSE_DATA_DIR"

DEFAULT_TOPICS = {
    "esp32": "plant/energy/esp32",
    "industrial": "plant/energy/industrial",
    "environment": "plant/env/room1",
}
DEFAULT_PERIODS = {"esp32": 4.0, "industrial": 5.0, "environment": 10.0}

TOPIC_STREAMS = {
    "esp32": "esp32_energy",
    "industrial": "industrial_energy",
    "environment": "environment",
}


class ConfigNotFound(Exception):
    pass


class ConfigInvalid(Exception):
    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


def _parse_bind(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bind must be host:port, got {value!r}")
    return host, int(port)


@dataclass
class BrokerSection:
    bind: str = "0.0.0.0:1883"
    in_flight_limit: int = 32
    max_payload: int = codec.MAX_PAYLOAD_BYTES
    keep_alive_grace: float = 1.5
    max_connections: int = 64
    retry_interval: float = 5.0


@dataclass
class MeterSection:
    bind: str = "127.0.0.1:1502"
    unit_id: int = 1
    update_period: float = 1.0
    base_power_kw: float = 0.955
    swing_kw: float = 0.006
    noise_kw: float = 0.002
    voltage_v: float = 415.0
    power_factor: float = 0.95


@dataclass
class WaveformSection:
    v_peak: float = 21.0
    i_peak: float = 1.1
    frequency: float = 50.0
    phase_lag: float = 0.6435  # ~ pf 0.8
    noise_stddev: float = 0.01
    drift_amplitude: float = 0.02
    drift_period: float = 60.0
    scale_v: float = 1.0
    scale_i: float = 1.0
    sample_rate: float = 2000.0
    cycles: int = 10


@dataclass
class EnvModelSection:
    base_temperature_c: float = 25.0
    daily_amplitude_c: float = 3.0
    temperature_noise: float = 0.2
    base_humidity_pct: float = 60.0
    daily_amplitude_pct: float = 8.0
    humidity_noise: float = 0.8


@dataclass
class DevicesSection:
    topics: dict = field(default_factory=lambda: dict(DEFAULT_TOPICS))
    periods: dict = field(default_factory=lambda: dict(DEFAULT_PERIODS))
    waveform: WaveformSection = field(default_factory=WaveformSection)
    environment_model: EnvModelSection = field(default_factory=EnvModelSection)
    qos: int = 1
    seed: int | None = None


@dataclass
class IngestSection:
    data_dir: str = "./data"
    subscription_filter: str = "plant/#"
    fsync: bool = True
    segment_roll_bytes: int = 64 * 1024 * 1024


@dataclass
class ApiSection:
    bind: str = "127.0.0.1:8080"
    users: list = field(default_factory=list)
    cors_origins: list = field(default_factory=list)
    token_ttl_hours: float = 12.0
    password_iterations: int = 50_000


@dataclass
class SystemConfig:
    broker: BrokerSection = field(default_factory=BrokerSection)
    meter: MeterSection = field(default_factory=MeterSection)
    devices: DevicesSection = field(default_factory=DevicesSection)
    ingest: IngestSection = field(default_factory=IngestSection)
    api: ApiSection = field(default_factory=ApiSection)
    log_level: str = "info"

    @property
    def data_dir(self) -> Path:
        return Path(os.environ.get(DATA_DIR_ENV, self.ingest.data_dir))

    def topic_map(self) -> dict[str, str]:
        """Publish topic -> stream name, for the ingest validator."""
        return {
            topic: TOPIC_STREAMS[kind] for kind, topic in self.devices.topics.items()
        }


def _fill_section(section, data, prefix: str, errors: list[str]):
    """Assign known keys from ``data`` onto the dataclass; flag unknowns."""
    known = set(section.__dataclass_fields__)
    for key, value in data.items():
        if key not in known:
            errors.append(f"{prefix}.{key}: unknown key")
            continue
        setattr(section, key, value)
    return section


def parse_config(raw: dict) -> SystemConfig:
    """Validate a parsed JSON object; raises ConfigInvalid listing every problem."""
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigInvalid(["config root must be a JSON object"])

    config = SystemConfig()
    section_names = {"broker", "meter", "devices", "ingest", "api"}
    for key, value in raw.items():
        if key == "log_level":
            config.log_level = str(value)
            continue
        if key not in section_names:
            errors.append(f"{key}: unknown section")
            continue
        if not isinstance(value, dict):
            errors.append(f"{key}: must be an object")
            continue
        sub = dict(value)
        if key == "devices":
            if "waveform" in sub:
                _fill_section(config.devices.waveform, sub.pop("waveform"),
                              "devices.waveform", errors)
            if "environment_model" in sub:
                _fill_section(config.devices.environment_model,
                              sub.pop("environment_model"),
                              "devices.environment_model", errors)
            if "topics" in sub:
                config.devices.topics.update(sub.pop("topics"))
            if "periods" in sub:
                config.devices.periods.update(sub.pop("periods"))
            _fill_section(config.devices, sub, "devices", errors)
        else:
            _fill_section(getattr(config, key), sub, key, errors)

    # -- cross-field validation ------------------------------------------------

    binds = {}
    for name, bind in (("broker.bind", config.broker.bind),
                       ("meter.bind", config.meter.bind),
                       ("api.bind", config.api.bind)):
        try:
            host, port = _parse_bind(bind)
        except ValueError as e:
            errors.append(f"{name}: {e}")
            continue
        if port == 0:
            continue  # ephemeral ports never collide
        if port in binds:
            errors.append(f"{name}: port {port} already used by {binds[port]}")
        else:
            binds[port] = name

    for kind in DEFAULT_TOPICS:
        topic = config.devices.topics.get(kind)
        if not isinstance(topic, str) or not topic:
            errors.append(f"devices.topics.{kind}: missing")
            continue
        try:
            codec.validate_publish_topic(topic)
        except codec.MalformedPacket as e:
            errors.append(f"devices.topics.{kind}: {e}")
    topics = [t for t in config.devices.topics.values() if isinstance(t, str)]
    if len(set(topics)) != len(topics):
        errors.append("devices.topics: topics must be distinct")
    for kind in DEFAULT_PERIODS:
        period = config.devices.periods.get(kind)
        if not isinstance(period, (int, float)) or period <= 0:
            errors.append(f"devices.periods.{kind}: must be a positive number")

    if config.devices.qos not in (0, 1):
        errors.append("devices.qos: must be 0 or 1")
    if config.broker.in_flight_limit < 1:
        errors.append("broker.in_flight_limit: must be >= 1")
    if config.broker.max_payload > codec.MAX_PAYLOAD_BYTES:
        errors.append(f"broker.max_payload: exceeds codec bound {codec.MAX_PAYLOAD_BYTES}")

    if not isinstance(config.api.users, list) or not config.api.users:
        errors.append("api.users: at least one user is required")
    else:
        for i, entry in enumerate(config.api.users):
            if not isinstance(entry, dict) or not entry.get("user") or not entry.get("password"):
                errors.append(f"api.users[{i}]: needs user and password")
            elif entry.get("role", "viewer") not in ROLES:
                errors.append(f"api.users[{i}]: role must be one of {ROLES}")

    if errors:
        raise ConfigInvalid(sorted(errors))
    return config


def load_config(path: str | Path) -> SystemConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigNotFound(str(path))
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigInvalid([f"not valid JSON: {e}"])
    return parse_config(raw)
