"""Append-only, checksummed, time-range-queryable telemetry store.

Layout: ``<data_dir>/<stream>/segment-<n>.log`` plus a ``MANIFEST`` file.
Each record is ``[u32 length][payload][u32 crc32]`` with a JSON payload;
the active segment rolls at a size bound. Appends are flushed (and by
default fsynced) before the assigned sequence number is returned, so an
acknowledged append survives a crash. Recovery truncates a torn tail and
quarantines any sealed segment with mid-file corruption.

One logical writer; any number of readers. Readers use positional reads
and never touch writer state. A :class:`StoreFollower` gives a separate
process a read view of the same directory that tails the active segments.
"""

from __future__ import annotations

import bisect
import json
import logging
import os
import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .schema import STREAMS, TelemetrySample

logger = logging.getLogger(__name__)

MANIFEST_NAME = "MANIFEST"
SEGMENT_ROLL_BYTES = 64 * 1024 * 1024
MAX_RECORD_BYTES = 1024 * 1024
MAX_QUERY_LIMIT = 10_000

_LEN = struct.Struct(">I")


class StoreError(Exception):
    pass


class InvalidRange(StoreError):
    """Bad from/to, limit, or order on a range query."""


class StoreUnavailable(StoreError):
    """The underlying files rejected a write; the store is degraded."""


class UnknownStream(KeyError):
    pass


@dataclass
class RecoveryStats:
    samples: dict[str, int] = field(default_factory=dict)
    truncated_bytes: int = 0
    quarantined_segments: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class _Location:
    segment: int
    offset: int
    length: int  # full record length including framing


def encode_record(sample: TelemetrySample) -> bytes:
    payload = json.dumps(
        {
            "seq": sample.seq,
            "ts": sample.ingest_ts,
            "src": sample.source_ts,
            "fields": sample.fields,
        },
        separators=(",", ":"),
    ).encode("utf-8")
    return _LEN.pack(len(payload)) + payload + _LEN.pack(zlib.crc32(payload))


def decode_record(stream: str, payload: bytes) -> TelemetrySample:
    obj = json.loads(payload.decode("utf-8"))
    return TelemetrySample(
        stream=stream,
        ingest_ts=obj["ts"],
        fields=obj["fields"],
        source_ts=obj["src"],
        seq=obj["seq"],
    )


def _segment_name(n: int) -> str:
    return f"segment-{n:06d}.log"


def _segment_number(name: str) -> int:
    return int(name.removeprefix("segment-").removesuffix(".log"))


class _StreamState:
    """Index and file handles for one stream."""

    def __init__(self, directory: Path):
        self.directory = directory
        self.ts: list[int] = []
        self.seq: list[int] = []
        self.loc: list[_Location] = []
        self.next_seq = 1
        self.last_ts = 0
        self.active_segment = 1
        self.active_size = 0
        self.write_fh = None  # type: ignore[assignment]
        self._read_fds: dict[int, int] = {}

    def segment_path(self, n: int) -> Path:
        return self.directory / _segment_name(n)

    def read_fd(self, n: int) -> int:
        fd = self._read_fds.get(n)
        if fd is None:
            fd = os.open(self.segment_path(n), os.O_RDONLY)
            self._read_fds[n] = fd
        return fd

    def close(self) -> None:
        if self.write_fh is not None:
            self.write_fh.close()
            self.write_fh = None
        for fd in self._read_fds.values():
            os.close(fd)
        self._read_fds.clear()

    def count_in_range(self, from_ts: int, to_ts: int) -> tuple[int, int]:
        lo = bisect.bisect_left(self.ts, from_ts)
        hi = bisect.bisect_right(self.ts, to_ts)
        return lo, hi


def _scan_segment(
    path: Path, on_record: Callable[[bytes, int, int], bool]
) -> tuple[int, int]:
    """Walk records in one segment file.

    ``on_record(payload, offset, record_length)`` returns False to abort.
    Returns (valid_end_offset, file_size). ``valid_end_offset < file_size``
    means the tail failed validation.
    """
    size = path.stat().st_size
    offset = 0
    with open(path, "rb") as fh:
        while offset + 4 <= size:
            header = fh.read(4)
            (length,) = _LEN.unpack(header)
            if length == 0 or length > MAX_RECORD_BYTES or offset + 8 + length > size:
                break
            payload = fh.read(length)
            (crc,) = _LEN.unpack(fh.read(4))
            if zlib.crc32(payload) != crc:
                break
            if not on_record(payload, offset, 8 + length):
                return offset, size
            offset += 8 + length
    return offset, size


class _ReaderMixin:
    """Query interface shared by the writable store and the follower."""

    _states: dict[str, _StreamState]

    def _state(self, stream: str) -> _StreamState:
        try:
            return self._states[stream]
        except KeyError:
            raise UnknownStream(stream) from None

    def _read_at(self, state: _StreamState, loc: _Location, stream: str) -> TelemetrySample:
        raw = os.pread(state.read_fd(loc.segment), loc.length, loc.offset)
        payload = raw[4:-4]
        return decode_record(stream, payload)

    def query_range(
        self,
        stream: str,
        from_ts: int,
        to_ts: int,
        *,
        limit: int = MAX_QUERY_LIMIT,
        order: str = "asc",
        after_seq: int | None = None,
    ) -> tuple[list[TelemetrySample], int | None, int]:
        """Samples with ``from_ts <= ingest_ts <= to_ts`` (inclusive both ends).

        Returns (rows, continuation sequence or None, total rows in range).
        """
        if from_ts > to_ts:
            raise InvalidRange(f"from {from_ts} > to {to_ts}")
        if not 1 <= limit <= MAX_QUERY_LIMIT:
            raise InvalidRange(f"limit {limit} outside 1..{MAX_QUERY_LIMIT}")
        if order not in ("asc", "desc"):
            raise InvalidRange(f"order must be asc or desc, got {order!r}")
        state = self._state(stream)
        lo, hi = state.count_in_range(from_ts, to_ts)
        total = hi - lo

        if order == "asc":
            start = lo
            if after_seq is not None:
                start = max(lo, bisect.bisect_right(state.seq, after_seq))
            indices = range(start, min(hi, start + limit))
            exhausted = indices.stop >= hi
        else:
            end = hi
            if after_seq is not None:
                end = min(hi, bisect.bisect_left(state.seq, after_seq))
            indices = range(end - 1, max(lo, end - limit) - 1, -1)
            exhausted = indices.stop < lo

        rows = [self._read_at(state, state.loc[i], stream) for i in indices]
        next_cursor = None if exhausted or not rows else rows[-1].seq
        return rows, next_cursor, total

    def latest(self, stream: str) -> TelemetrySample | None:
        state = self._state(stream)
        if not state.loc:
            return None
        return self._read_at(state, state.loc[-1], stream)

    def stream_stats(self) -> dict[str, int]:
        return {stream: len(state.seq) for stream, state in self._states.items()}

    def last_seq(self, stream: str) -> int:
        state = self._state(stream)
        return state.seq[-1] if state.seq else 0


class SegmentStore(_ReaderMixin):
    """Writable store handle; also serves queries for in-process readers."""

    def __init__(
        self,
        data_dir: str | os.PathLike,
        *,
        streams: Iterable[str] | None = None,
        roll_bytes: int = SEGMENT_ROLL_BYTES,
        fsync: bool = True,
    ):
        self.data_dir = Path(data_dir)
        self.streams = tuple(streams) if streams is not None else tuple(STREAMS)
        self.roll_bytes = roll_bytes
        self.fsync = fsync
        self.degraded = False
        self._states: dict[str, _StreamState] = {}
        self._listeners: list[Callable[[TelemetrySample], None]] = []
        self.recovery = self._open()

    # -- lifecycle ----------------------------------------------------------

    def _open(self) -> RecoveryStats:
        stats = RecoveryStats()
        self.data_dir.mkdir(parents=True, exist_ok=True)
        manifest = self.data_dir / MANIFEST_NAME
        if not manifest.exists():
            manifest.write_text(
                json.dumps({"version": 1, "streams": list(self.streams)}, indent=2)
            )
        for stream in self.streams:
            state = _StreamState(self.data_dir / stream)
            state.directory.mkdir(exist_ok=True)
            self._recover_stream(stream, state, stats)
            self._states[stream] = state
            stats.samples[stream] = len(state.seq)
        return stats

    def _recover_stream(self, stream: str, state: _StreamState, stats: RecoveryStats) -> None:
        segments = sorted(
            (p for p in state.directory.glob("segment-*.log")),
            key=lambda p: _segment_number(p.name),
        )
        if not segments:
            state.segment_path(1).touch()
            segments = [state.segment_path(1)]

        for i, path in enumerate(segments):
            seg_no = _segment_number(path.name)
            pending: list[tuple[bytes, int, int]] = []

            def keep(payload: bytes, offset: int, length: int) -> bool:
                pending.append((payload, offset, length))
                return True

            valid_end, size = _scan_segment(path, keep)
            is_last = i == len(segments) - 1
            if valid_end < size and not is_last:
                quarantined = path.with_suffix(".log.quarantined")
                path.rename(quarantined)
                stats.quarantined_segments.append(str(quarantined))
                logger.warning(
                    "quarantined corrupt sealed segment %s (stream %s)", path.name, stream
                )
                continue
            if valid_end < size:
                with open(path, "r+b") as fh:
                    fh.truncate(valid_end)
                stats.truncated_bytes += size - valid_end
                logger.warning(
                    "truncated %d torn bytes from %s (stream %s)",
                    size - valid_end, path.name, stream,
                )
            for payload, offset, length in pending:
                sample = decode_record(stream, payload)
                state.ts.append(sample.ingest_ts)
                state.seq.append(sample.seq)
                state.loc.append(_Location(seg_no, offset, length))
                state.next_seq = sample.seq + 1
                state.last_ts = max(state.last_ts, sample.ingest_ts)
            state.active_segment = seg_no
            state.active_size = valid_end

        state.write_fh = open(state.segment_path(state.active_segment), "ab")

    def close(self) -> None:
        for state in self._states.values():
            state.close()

    # -- writing -------------------------------------------------------------

    def add_listener(self, fn: Callable[[TelemetrySample], None]) -> None:
        """Register an append hook; must not block (e.g. queue.put_nowait)."""
        self._listeners.append(fn)

    def remove_listener(self, fn: Callable[[TelemetrySample], None]) -> None:
        self._listeners.remove(fn)

    def append(
        self,
        stream: str,
        fields: dict[str, float],
        *,
        ingest_ts: int | None = None,
        source_ts: float | None = None,
    ) -> int:
        """Durably append one sample; returns its sequence number.

        The ingest timestamp is clamped to be non-decreasing per stream.
        """
        state = self._state(stream)
        ts = int(time.time() * 1000) if ingest_ts is None else int(ingest_ts)
        ts = max(ts, state.last_ts)
        sample = TelemetrySample(
            stream=stream, ingest_ts=ts, fields=dict(fields),
            source_ts=source_ts, seq=state.next_seq,
        )
        record = encode_record(sample)
        try:
            if state.active_size and state.active_size + len(record) > self.roll_bytes:
                self._roll(state)
            offset = state.active_size
            state.write_fh.write(record)
            state.write_fh.flush()
            if self.fsync:
                os.fsync(state.write_fh.fileno())
        except OSError as e:
            self.degraded = True
            raise StoreUnavailable(f"append to {stream} failed: {e}") from e

        state.ts.append(ts)
        state.seq.append(sample.seq)
        state.loc.append(_Location(state.active_segment, offset, len(record)))
        state.next_seq += 1
        state.last_ts = ts
        state.active_size += len(record)
        for fn in self._listeners:
            fn(sample)
        return sample.seq

    def _roll(self, state: _StreamState) -> None:
        state.write_fh.close()
        state.active_segment += 1
        state.active_size = 0
        path = state.segment_path(state.active_segment)
        path.touch()
        state.write_fh = open(path, "ab")
        logger.info("rolled to %s", path)

class StoreFollower(_ReaderMixin):
    """Read-only view over a store directory owned by another process.

    Builds the same in-memory index by scanning, then :meth:`poll` picks up
    newly flushed records (and rolled segments). Never modifies any file;
    a torn tail is simply ignored until the writer completes it.
    """

    def __init__(self, data_dir: str | os.PathLike, streams: Iterable[str] | None = None):
        self.data_dir = Path(data_dir)
        self.streams = tuple(streams) if streams is not None else tuple(STREAMS)
        self._states: dict[str, _StreamState] = {}
        self._listeners: list[Callable[[TelemetrySample], None]] = []
        for stream in self.streams:
            state = _StreamState(self.data_dir / stream)
            self._states[stream] = state
        self.poll()

    def add_listener(self, fn: Callable[[TelemetrySample], None]) -> None:
        self._listeners.append(fn)

    def remove_listener(self, fn: Callable[[TelemetrySample], None]) -> None:
        self._listeners.remove(fn)

    def poll(self) -> int:
        """Scan for new records across all streams; returns how many appeared."""
        new = 0
        for stream, state in self._states.items():
            if not state.directory.is_dir():
                continue
            segments = sorted(
                (p for p in state.directory.glob("segment-*.log")),
                key=lambda p: _segment_number(p.name),
            )
            for path in segments:
                seg_no = _segment_number(path.name)
                if seg_no < state.active_segment:
                    continue
                resume = state.active_size if seg_no == state.active_segment else 0
                new += self._scan_from(stream, state, path, seg_no, resume)
        return new

    def _scan_from(
        self, stream: str, state: _StreamState, path: Path, seg_no: int, resume: int
    ) -> int:
        size = path.stat().st_size
        if seg_no == state.active_segment and size <= resume:
            return 0
        count = 0
        with open(path, "rb") as fh:
            fh.seek(resume)
            offset = resume
            while offset + 8 <= size:
                header = fh.read(4)
                if len(header) < 4:
                    break
                (length,) = _LEN.unpack(header)
                if length == 0 or length > MAX_RECORD_BYTES or offset + 8 + length > size:
                    break
                payload = fh.read(length)
                (crc,) = _LEN.unpack(fh.read(4))
                if zlib.crc32(payload) != crc:
                    break
                sample = decode_record(stream, payload)
                state.ts.append(sample.ingest_ts)
                state.seq.append(sample.seq)
                state.loc.append(_Location(seg_no, offset, 8 + length))
                state.last_ts = max(state.last_ts, sample.ingest_ts)
                offset += 8 + length
                count += 1
                for fn in self._listeners:
                    fn(sample)
            state.active_segment = seg_no
            state.active_size = offset
        return count

    def close(self) -> None:
        for state in self._states.values():
            state.close()
