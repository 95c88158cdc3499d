"""The subscriber side: one wildcard subscription feeding the store.

Every delivery is validated against its stream schema; rejects are counted
by reason and sampled into a small quarantine ring for debugging. Nothing
invalid is ever stored, and nothing valid is silently lost: stored + rejected
equals delivered.
"""

from __future__ import annotations

import logging
import time
from collections import Counter, deque

from ..mqtt.client import MqttClient
from .schema import DEFAULT_TOPIC_MAP, RejectError, parse_payload
from .store import SegmentStore, StoreUnavailable

logger = logging.getLogger(__name__)

QUARANTINE_KEEP = 100


class IngestService:
    def __init__(self, store: SegmentStore, client: MqttClient, *,
                 subscription_filter: str = "plant/#",
                 topic_map: dict[str, str] | None = None,
                 clock=time.time):
        self.store = store
        self.client = client
        self.subscription_filter = subscription_filter
        self.topic_map = dict(DEFAULT_TOPIC_MAP if topic_map is None else topic_map)
        self.clock = clock
        self.stored_count = 0
        self.rejections: Counter[str] = Counter()
        self.quarantine: deque[tuple[str, bytes, str]] = deque(maxlen=QUARANTINE_KEEP)
        self.subscribed = False

    @property
    def rejected_count(self) -> int:
        return sum(self.rejections.values())

    async def start(self) -> None:
        """Subscribe at QoS 1; returns once the broker has granted it."""
        await self.client.subscribe(self.subscription_filter, self.on_message, qos=1)
        self.subscribed = True
        logger.info("event=ingest_subscribed filter=%s", self.subscription_filter)

    def on_message(self, topic: str, payload: bytes) -> None:
        try:
            sample = parse_payload(
                topic, payload,
                now_ms=int(self.clock() * 1000),
                topic_map=self.topic_map,
            )
        except RejectError as e:
            self.rejections[e.reason] += 1
            self.quarantine.append((topic, payload[:256], e.reason))
            logger.warning("event=payload_rejected topic=%s reason=%s detail=%s",
                           topic, e.reason, e)
            return
        try:
            self.store.append(
                sample.stream, sample.fields,
                ingest_ts=sample.ingest_ts, source_ts=sample.source_ts,
            )
            self.stored_count += 1
        except StoreUnavailable as e:
            self.rejections["storage_error"] += 1
            logger.error("event=store_degraded detail=%s", e)

    def health(self) -> dict:
        return {
            "subscribed": self.subscribed,
            "stored": self.stored_count,
            "rejected": dict(self.rejections),
            "store_degraded": self.store.degraded,
        }
