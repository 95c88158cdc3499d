"""Data-dir initialization: user table, empty streams, optional fixtures.

Fixture CSV format (header required): ``stream,time,field,value``. Rows
sharing a (stream, time) pair merge into one sample; samples load in
time order per stream so stored sequence numbers follow the timeline.
"""

from __future__ import annotations

import csv
import importlib.resources
import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..api.auth import AuthStore
from ..api.server import parse_time
from ..ingest.schema import STREAMS
from ..ingest.store import MANIFEST_NAME, SegmentStore
from .config import SystemConfig

logger = logging.getLogger(__name__)

USERS_FILE = "users.json"


class RefusesOverwrite(Exception):
    """The data dir is already seeded; pass force to replace it."""


class FixtureError(Exception):
    pass


@dataclass
class SeedStats:
    data_dir: str = ""
    users: int = 0
    samples: dict[str, int] = field(default_factory=dict)


def resolve_fixture(name_or_path: str) -> Path:
    """A filesystem path, or the name of a fixture bundled with the package."""
    path = Path(name_or_path)
    if path.is_file():
        return path
    bundled = importlib.resources.files("plantpulse") / "fixtures" / name_or_path
    if bundled.is_file():
        return Path(str(bundled))
    raise FixtureError(f"fixture {name_or_path!r} not found on disk or in the package")


def load_fixture(store: SegmentStore, path: Path) -> dict[str, int]:
    """Append fixture rows; returns per-stream sample counts."""
    groups: dict[tuple[str, int], dict[str, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["stream", "time", "field", "value"]:
            raise FixtureError(
                f"fixture header must be stream,time,field,value, got {reader.fieldnames}"
            )
        for line_no, row in enumerate(reader, start=2):
            stream = row["stream"]
            schema = STREAMS.get(stream)
            if schema is None:
                raise FixtureError(f"line {line_no}: unknown stream {stream!r}")
            if row["field"] not in schema.fields:
                raise FixtureError(
                    f"line {line_no}: {row['field']!r} is not a {stream} field"
                )
            try:
                ts = parse_time(row["time"])
                value = float(row["value"])
            except ValueError as e:
                raise FixtureError(f"line {line_no}: {e}") from e
            groups.setdefault((stream, ts), {})[row["field"]] = value

    counts: dict[str, int] = {}
    for (stream, ts), fields in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        missing = set(STREAMS[stream].fields) - set(fields)
        if missing:
            raise FixtureError(
                f"sample {stream}@{ts} is missing fields {sorted(missing)}"
            )
        store.append(stream, fields, ingest_ts=ts)
        counts[stream] = counts.get(stream, 0) + 1
    return counts


def seed(config: SystemConfig, *, force: bool = False,
         fixture: str | None = None) -> SeedStats:
    data_dir = config.data_dir
    manifest = data_dir / MANIFEST_NAME
    users_path = data_dir / USERS_FILE
    if (manifest.exists() or users_path.exists()) and not force:
        raise RefusesOverwrite(
            f"{data_dir} is already seeded; use --force to replace it"
        )
    if force and data_dir.exists():
        _wipe(data_dir)

    store = SegmentStore(
        data_dir,
        roll_bytes=config.ingest.segment_roll_bytes,
        fsync=config.ingest.fsync,
    )
    stats = SeedStats(data_dir=str(data_dir))
    try:
        auth = AuthStore.from_entries(
            config.api.users, iterations=config.api.password_iterations
        )
        auth.save(users_path)
        stats.users = len(auth.users)
        stats.samples = {name: 0 for name in STREAMS}
        if fixture is not None:
            stats.samples.update(load_fixture(store, resolve_fixture(fixture)))
    finally:
        store.close()
    logger.info("event=seeded data_dir=%s users=%d samples=%s",
                data_dir, stats.users, stats.samples)
    return stats


def _wipe(data_dir: Path) -> None:
    (data_dir / MANIFEST_NAME).unlink(missing_ok=True)
    (data_dir / USERS_FILE).unlink(missing_ok=True)
    for stream in STREAMS:
        stream_dir = data_dir / stream
        if not stream_dir.is_dir():
            continue
        for segment in stream_dir.glob("segment-*"):
            segment.unlink()
        stream_dir.rmdir()
