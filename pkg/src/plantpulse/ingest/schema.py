"""Canonical telemetry streams, payload schemas, and payload validation.

Every stored record belongs to one of three streams. A payload must carry
exactly the stream's fields (plus an optional ``ts`` publisher timestamp);
anything else is rejected and counted, never stored.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

SOURCE_TS_KEY = "ts"


@dataclass(frozen=True)
class StreamSchema:
    stream: str
    fields: tuple[str, ...]
    units: dict[str, str]
    # (lo, hi) inclusive bounds for fields that have a physical range
    ranges: dict[str, tuple[float, float]] = field(default_factory=dict)


STREAMS: dict[str, StreamSchema] = {
    s.stream: s
    for s in (
        StreamSchema(
            stream="esp32_energy",
            fields=("voltage", "current"),
            units={"voltage": "V", "current": "A"},
        ),
        StreamSchema(
            stream="industrial_energy",
            fields=("power_kw",),
            units={"power_kw": "kW"},
        ),
        StreamSchema(
            stream="environment",
            fields=("temperature_c", "humidity_pct"),
            units={"temperature_c": "degC", "humidity_pct": "%RH"},
            ranges={"humidity_pct": (0.0, 100.0)},
        ),
    )
}

DEFAULT_TOPIC_MAP = {
    "plant/energy/esp32": "esp32_energy",
    "plant/energy/industrial": "industrial_energy",
    "plant/env/room1": "environment",
}


@dataclass(frozen=True)
class TelemetrySample:
    stream: str
    ingest_ts: int  # UTC milliseconds
    fields: dict[str, float]
    source_ts: float | None = None
    seq: int | None = None  # assigned at append


class RejectError(Exception):
    """Base for payload rejection; ``reason`` keys the rejection counter."""

    reason = "other"


class UnknownTopic(RejectError):
    reason = "unknown_topic"


class MalformedJson(RejectError):
    reason = "malformed_json"


class SchemaViolation(RejectError):
    reason = "schema_violation"


def parse_payload(
    topic: str,
    payload: bytes,
    *,
    now_ms: int,
    topic_map: dict[str, str] | None = None,
) -> TelemetrySample:
    """Validate one published payload into an unsequenced sample.

    The ingest clock (``now_ms``) becomes the canonical timestamp; a
    publisher-side ``ts`` is kept verbatim but never used for ordering.
    """
    topics = DEFAULT_TOPIC_MAP if topic_map is None else topic_map
    stream = topics.get(topic)
    if stream is None:
        raise UnknownTopic(f"no stream mapped to topic {topic!r}")
    schema = STREAMS[stream]

    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedJson(str(e)) from e
    if not isinstance(obj, dict):
        raise SchemaViolation(f"payload must be a JSON object, got {type(obj).__name__}")

    source_ts = obj.pop(SOURCE_TS_KEY, None)
    if source_ts is not None and not isinstance(source_ts, (int, float)):
        raise SchemaViolation("ts must be numeric")

    expected = set(schema.fields)
    got = set(obj)
    if got != expected:
        missing, extra = sorted(expected - got), sorted(got - expected)
        raise SchemaViolation(f"field mismatch: missing={missing} extra={extra}")

    values: dict[str, float] = {}
    for name in schema.fields:
        v = obj[name]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaViolation(f"{name} must be a number, got {v!r}")
        v = float(v)
        if not math.isfinite(v):
            raise SchemaViolation(f"{name} must be finite")
        bounds = schema.ranges.get(name)
        if bounds is not None and not bounds[0] <= v <= bounds[1]:
            raise SchemaViolation(f"{name}={v} outside [{bounds[0]}, {bounds[1]}]")
        values[name] = v

    return TelemetrySample(
        stream=stream,
        ingest_ts=now_ms,
        fields=values,
        source_ts=float(source_ts) if source_ts is not None else None,
    )
