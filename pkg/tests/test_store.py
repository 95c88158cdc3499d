import json
import random
import struct
import zlib

import pytest

from plantpulse.ingest.store import (
    InvalidRange,
    SegmentStore,
    StoreFollower,
    UnknownStream,
    encode_record,
)


@pytest.fixture
def store(tmp_path):
    s = SegmentStore(tmp_path / "data", fsync=False)
    yield s
    s.close()


def fill(store, stream="industrial_energy", times=(), value=0.95):
    return [
        store.append(stream, {"power_kw": value}, ingest_ts=t) for t in times
    ]


class TestAppend:
    def test_first_seq_is_one(self, store):
        assert store.append("industrial_energy", {"power_kw": 0.95}) == 1

    def test_no_gaps(self, store):
        seqs = fill(store, times=range(1000, 2000))
        assert seqs == list(range(1, 1001))

    def test_ts_clamped_non_decreasing(self, store):
        fill(store, times=[100])
        store.append("industrial_energy", {"power_kw": 1.0}, ingest_ts=50)
        rows, _, _ = store.query_range("industrial_energy", 0, 10_000)
        assert [r.ingest_ts for r in rows] == [100, 100]

    def test_streams_are_independent(self, store):
        store.append("industrial_energy", {"power_kw": 1.0})
        assert store.append("environment", {"temperature_c": 25.0, "humidity_pct": 50.0}) == 1

    def test_unknown_stream(self, store):
        with pytest.raises(UnknownStream):
            store.append("nope", {})


class TestQueryRange:
    def test_inclusive_bounds(self, store):
        fill(store, times=[10, 20, 30])
        rows, cursor, total = store.query_range("industrial_energy", 15, 30)
        assert [r.ingest_ts for r in rows] == [20, 30]
        assert cursor is None
        assert total == 2

    def test_empty_range(self, store):
        fill(store, times=[10, 20, 30])
        rows, cursor, total = store.query_range("industrial_energy", 0, 5)
        assert rows == [] and cursor is None and total == 0

    def test_desc_is_reverse_of_asc(self, store):
        fill(store, times=[10, 20, 30, 40])
        asc, _, _ = store.query_range("industrial_energy", 0, 100, order="asc")
        desc, _, _ = store.query_range("industrial_energy", 0, 100, order="desc")
        assert desc == list(reversed(asc))

    def test_invalid_ranges(self, store):
        with pytest.raises(InvalidRange):
            store.query_range("industrial_energy", 10, 5)
        with pytest.raises(InvalidRange):
            store.query_range("industrial_energy", 0, 10, limit=0)
        with pytest.raises(InvalidRange):
            store.query_range("industrial_energy", 0, 10, limit=10_001)
        with pytest.raises(InvalidRange):
            store.query_range("industrial_energy", 0, 10, order="sideways")

    def test_pagination_walk_equals_unpaginated(self, store):
        fill(store, times=[i * 10 for i in range(37)])
        for order in ("asc", "desc"):
            whole, _, total = store.query_range("industrial_energy", 0, 10_000, order=order)
            assert total == 37
            walked = []
            cursor = None
            while True:
                rows, cursor, _ = store.query_range(
                    "industrial_energy", 0, 10_000, limit=5, order=order, after_seq=cursor
                )
                walked.extend(rows)
                if cursor is None:
                    break
            assert walked == whole

    def test_randomized_probes_match_mirror(self, store):
        rng = random.Random(1)
        mirror = []
        t = 0
        for _ in range(300):
            t += rng.randrange(0, 5)
            seq = store.append("industrial_energy", {"power_kw": rng.random()}, ingest_ts=t)
            mirror.append((t, seq))
        for _ in range(1000):
            a, b = sorted((rng.randrange(-5, 20), rng.randrange(-5, 20)))
            a, b = a * 60, b * 60
            limit = rng.randrange(1, 50)
            order = rng.choice(("asc", "desc"))
            rows, _, total = store.query_range(
                "industrial_energy", a, b, limit=limit, order=order
            )
            expected = [(ts, seq) for ts, seq in mirror if a <= ts <= b]
            if order == "desc":
                expected = expected[::-1]
            assert total == len(expected)
            assert [(r.ingest_ts, r.seq) for r in rows] == expected[:limit]


class TestLatest:
    def test_empty(self, store):
        assert store.latest("environment") is None

    def test_highest_seq(self, store):
        fill(store, times=[10, 20, 30, 40, 50])
        latest = store.latest("industrial_energy")
        assert latest.seq == 5 and latest.ingest_ts == 50


class TestRecovery:
    def path(self, tmp_path):
        return tmp_path / "data"

    def test_clean_reopen_identical(self, tmp_path):
        s = SegmentStore(self.path(tmp_path), fsync=False)
        fill(s, times=[10, 20, 30])
        before, _, _ = s.query_range("industrial_energy", 0, 100)
        s.close()

        s2 = SegmentStore(self.path(tmp_path), fsync=False)
        assert s2.recovery.truncated_bytes == 0
        after, _, _ = s2.query_range("industrial_energy", 0, 100)
        assert after == before
        s2.close()

    def test_truncated_tail_drops_exactly_last_sample(self, tmp_path):
        s = SegmentStore(self.path(tmp_path), fsync=False)
        fill(s, times=[10, 20, 30])
        s.close()
        seg = self.path(tmp_path) / "industrial_energy" / "segment-000001.log"
        seg.write_bytes(seg.read_bytes()[:-3])

        s2 = SegmentStore(self.path(tmp_path), fsync=False)
        assert s2.recovery.truncated_bytes > 0
        rows, _, _ = s2.query_range("industrial_energy", 0, 100)
        assert [r.ingest_ts for r in rows] == [10, 20]
        # appends continue from the surviving sequence
        assert s2.append("industrial_energy", {"power_kw": 1.0}, ingest_ts=40) == 3
        s2.close()

    def test_garbage_tail_truncated(self, tmp_path):
        s = SegmentStore(self.path(tmp_path), fsync=False)
        fill(s, times=[10, 20])
        s.close()
        seg = self.path(tmp_path) / "industrial_energy" / "segment-000001.log"
        with open(seg, "ab") as fh:
            fh.write(bytes([0xDE, 0xAD, 0xBE]))

        s2 = SegmentStore(self.path(tmp_path), fsync=False)
        assert s2.recovery.truncated_bytes == 3
        assert s2.recovery.samples["industrial_energy"] == 2
        s2.close()

    def test_corrupt_crc_in_tail_record(self, tmp_path):
        s = SegmentStore(self.path(tmp_path), fsync=False)
        fill(s, times=[10, 20])
        s.close()
        seg = self.path(tmp_path) / "industrial_energy" / "segment-000001.log"
        blob = bytearray(seg.read_bytes())
        blob[-1] ^= 0xFF  # flip a bit inside the final record's checksum
        seg.write_bytes(bytes(blob))

        s2 = SegmentStore(self.path(tmp_path), fsync=False)
        rows, _, _ = s2.query_range("industrial_energy", 0, 100)
        assert [r.ingest_ts for r in rows] == [10]
        s2.close()

    def test_sealed_corrupt_segment_quarantined(self, tmp_path):
        s = SegmentStore(self.path(tmp_path), roll_bytes=128, fsync=False)
        fill(s, times=range(100, 120))  # forces several rolls at 128 bytes
        stream_dir = self.path(tmp_path) / "industrial_energy"
        segments = sorted(stream_dir.glob("segment-*.log"))
        assert len(segments) > 2
        s.close()

        # corrupt the middle of the FIRST (sealed) segment
        blob = bytearray(segments[0].read_bytes())
        blob[6] ^= 0xFF
        segments[0].write_bytes(bytes(blob))

        s2 = SegmentStore(self.path(tmp_path), roll_bytes=128, fsync=False)
        assert len(s2.recovery.quarantined_segments) == 1
        assert s2.recovery.samples["industrial_energy"] < 20
        assert s2.recovery.samples["industrial_energy"] > 0
        s2.close()

    def test_empty_dir(self, tmp_path):
        s = SegmentStore(self.path(tmp_path), fsync=False)
        assert s.recovery.samples == {
            "esp32_energy": 0, "industrial_energy": 0, "environment": 0,
        }
        assert s.stream_stats() == s.recovery.samples
        s.close()


class TestSegmentRoll:
    def test_rolls_and_reads_across_segments(self, tmp_path):
        s = SegmentStore(tmp_path / "data", roll_bytes=256, fsync=False)
        fill(s, times=range(50))
        stream_dir = tmp_path / "data" / "industrial_energy"
        assert len(list(stream_dir.glob("segment-*.log"))) > 1
        rows, _, total = s.query_range("industrial_energy", 0, 100)
        assert total == 50
        assert [r.ingest_ts for r in rows] == list(range(50))
        s.close()


class TestListeners:
    def test_listener_sees_every_append(self, store):
        seen = []
        store.add_listener(seen.append)
        fill(store, times=[1, 2, 3])
        assert [s.seq for s in seen] == [1, 2, 3]
        store.remove_listener(seen.append)
        fill(store, times=[4])
        assert len(seen) == 3


class TestFollower:
    def test_follower_tails_live_appends(self, tmp_path):
        writer = SegmentStore(tmp_path / "data", fsync=False)
        fill(writer, times=[10, 20])

        follower = StoreFollower(tmp_path / "data")
        assert follower.stream_stats()["industrial_energy"] == 2

        seen = []
        follower.add_listener(seen.append)
        fill(writer, times=[30, 40])
        assert follower.poll() == 2
        assert [s.ingest_ts for s in seen] == [30, 40]
        rows, _, _ = follower.query_range("industrial_energy", 0, 100)
        assert [r.seq for r in rows] == [1, 2, 3, 4]
        writer.close()
        follower.close()

    def test_follower_handles_roll(self, tmp_path):
        writer = SegmentStore(tmp_path / "data", roll_bytes=256, fsync=False)
        follower = StoreFollower(tmp_path / "data")
        fill(writer, times=range(50))
        follower.poll()
        assert follower.stream_stats()["industrial_energy"] == 50
        writer.close()
        follower.close()

    def test_follower_ignores_torn_tail_until_complete(self, tmp_path):
        writer = SegmentStore(tmp_path / "data", fsync=False)
        fill(writer, times=[10])
        seg = tmp_path / "data" / "industrial_energy" / "segment-000001.log"

        # simulate a half-flushed record after the good one
        sample_bytes = encode_record(
            type(writer.latest("industrial_energy"))(
                stream="industrial_energy", ingest_ts=20,
                fields={"power_kw": 1.0}, source_ts=None, seq=2,
            )
        )
        with open(seg, "ab") as fh:
            fh.write(sample_bytes[: len(sample_bytes) // 2])

        follower = StoreFollower(tmp_path / "data")
        assert follower.stream_stats()["industrial_energy"] == 1

        with open(seg, "r+b") as fh:
            fh.seek(0, 2)
            start = fh.tell() - len(sample_bytes) // 2
            fh.seek(start)
            fh.write(sample_bytes)  # complete the record
        assert follower.poll() == 1
        assert follower.latest("industrial_energy").seq == 2
        writer.close()
        follower.close()


def test_record_encoding_is_length_prefixed_and_checksummed(store):
    store.append("industrial_energy", {"power_kw": 0.95}, ingest_ts=5)
    latest = store.latest("industrial_energy")
    record = encode_record(latest)
    (length,) = struct.unpack(">I", record[:4])
    payload = record[4:4 + length]
    (crc,) = struct.unpack(">I", record[4 + length:])
    assert zlib.crc32(payload) == crc
    decoded = json.loads(payload)
    assert decoded["fields"] == {"power_kw": 0.95}
    assert decoded["ts"] == 5
