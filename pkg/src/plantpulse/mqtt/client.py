"""Shared MQTT client for all publishers and the ingest subscriber.

One handle serves concurrent publishers; subscription callbacks run
serialized on a single dispatcher task, in broker delivery order. The
handle survives link drops: it reconnects with exponential backoff,
re-subscribes everything, re-sends unacknowledged QoS 1 publishes with
the dup flag, and flushes up to ``buffer_size`` publishes captured while
offline (oldest dropped first, with a counter, telemetry favoring
recency over completeness).
"""

from __future__ import annotations

import asyncio
import inspect
import itertools
import logging
from dataclasses import dataclass, field

from . import codec
from .topics import InvalidFilter, topic_matches, validate_filter

logger = logging.getLogger(__name__)


class ClientError(Exception):
    pass


class ConnectionRefused(ClientError):
    pass


class HandshakeTimeout(ClientError):
    pass


class HandshakeRejected(ClientError):
    def __init__(self, code: int):
        self.code = code
        super().__init__(f"broker refused connection with code {code}")


class PayloadTooLarge(ClientError):
    pass


class Disconnected(ClientError):
    pass


@dataclass
class ClientOptions:
    host: str
    port: int
    client_id: str
    keep_alive: int = 30
    default_qos: int = 0
    handshake_timeout: float = 5.0
    backoff_initial: float = 0.5
    backoff_factor: float = 2.0
    backoff_cap: float = 16.0
    buffering: bool = True
    buffer_size: int = 128

    def __post_init__(self):
        if not self.client_id:
            raise ValueError("client id must be non-empty")
        if self.keep_alive < 0:
            raise ValueError("keep-alive must be >= 0")


DELIVERED = "delivered"
BUFFERED = "buffered"
DROPPED = "dropped"


class Receipt:
    """Resolves when the publish is on the wire (QoS 0), acknowledged
    (QoS 1), or dropped from the offline buffer."""

    def __init__(self):
        self._outcome: asyncio.Future[str] = asyncio.get_event_loop().create_future()
        self.state = "pending"

    def _settle(self, outcome: str) -> None:
        if not self._outcome.done():
            self.state = outcome
            self._outcome.set_result(outcome)

    def _mark_buffered(self) -> None:
        if self.state == "pending":
            self.state = BUFFERED

    async def wait(self, timeout: float | None = None) -> str:
        return await asyncio.wait_for(asyncio.shield(self._outcome), timeout)

    @property
    def done(self) -> bool:
        return self._outcome.done()


@dataclass
class _PendingPublish:
    publish: codec.Publish
    receipt: Receipt


@dataclass
class _Subscription:
    filter_str: str
    parsed: object
    qos: int
    handlers: list = field(default_factory=list)


class MqttClient:
    def __init__(self, options: ClientOptions):
        self.options = options
        self.drop_counter = 0
        self._reader: asyncio.StreamReader | None = None
        self._writer: asyncio.StreamWriter | None = None
        self._connected = asyncio.Event()
        self._stopping = False
        self._supervisor: asyncio.Task | None = None
        self._dispatcher: asyncio.Task | None = None
        self._ping_task: asyncio.Task | None = None
        self._inbound: asyncio.Queue = asyncio.Queue()
        self._read_buffer = bytearray()
        self._subscriptions: dict[str, _Subscription] = {}
        self._suback_waiters: dict[int, asyncio.Future] = {}
        self._window: dict[int, _PendingPublish] = {}
        self._offline: list[_PendingPublish] = []
        self._packet_ids = itertools.cycle(range(1, 0x10000))

    # -- connection management -------------------------------------------------

    @property
    def connected(self) -> bool:
        return self._connected.is_set()

    async def connect(self) -> "MqttClient":
        """Handshake with the broker; the handle auto-reconnects afterwards.

        A failed first attempt raises, but the background retry loop is
        already armed, so the handle remains usable (publishes buffer).
        """
        first_attempt: asyncio.Future = asyncio.get_event_loop().create_future()
        self._dispatcher = asyncio.create_task(self._dispatch_loop())
        self._supervisor = asyncio.create_task(self._supervise(first_attempt))
        await first_attempt
        return self

    async def close(self) -> None:
        self._stopping = True
        if self._writer is not None and self.connected:
            try:
                self._writer.write(codec.encode_packet(codec.Disconnect()))
                await self._writer.drain()
            except (ConnectionResetError, BrokenPipeError):
                pass
        for task in (self._supervisor, self._dispatcher, self._ping_task):
            if task is not None:
                task.cancel()
        if self._writer is not None:
            self._writer.close()
        self._connected.clear()

    async def _supervise(self, first_attempt: asyncio.Future) -> None:
        backoff = self.options.backoff_initial
        first = True
        while not self._stopping:
            try:
                await self._connect_once()
            except Exception as e:
                if first:
                    first = False
                    first_attempt.set_exception(e)
                logger.warning("event=connect_failed client_id=%s detail=%s",
                               self.options.client_id, e)
                await asyncio.sleep(backoff)
                backoff = min(backoff * self.options.backoff_factor,
                              self.options.backoff_cap)
                continue
            backoff = self.options.backoff_initial
            if first:
                first = False
                first_attempt.set_result(None)
            read_task = asyncio.create_task(self._read_loop())
            try:
                await self._restore_state()
                await read_task
            except (ConnectionResetError, BrokenPipeError, asyncio.TimeoutError,
                    asyncio.IncompleteReadError, codec.MalformedPacket) as e:
                logger.warning("event=link_lost client_id=%s detail=%s",
                               self.options.client_id, e)
            finally:
                read_task.cancel()
                self._connected.clear()
                if self._ping_task is not None:
                    self._ping_task.cancel()
                    self._ping_task = None

    async def _connect_once(self) -> None:
        opts = self.options
        try:
            reader, writer = await asyncio.open_connection(opts.host, opts.port)
        except OSError as e:
            raise ConnectionRefused(f"{opts.host}:{opts.port}: {e}") from e
        writer.write(codec.encode_packet(codec.Connect(
            client_id=opts.client_id, keep_alive=opts.keep_alive, clean_session=True,
        )))
        await writer.drain()
        buffer = bytearray()
        try:
            packet = await asyncio.wait_for(
                self._read_one(reader, buffer), opts.handshake_timeout
            )
        except asyncio.TimeoutError:
            writer.close()
            raise HandshakeTimeout(f"no CONNACK within {opts.handshake_timeout}s")
        if not isinstance(packet, codec.ConnAck):
            writer.close()
            raise HandshakeRejected(-1)
        if packet.return_code != 0:
            writer.close()
            raise HandshakeRejected(packet.return_code)
        self._reader, self._writer = reader, writer
        self._read_buffer = buffer
        self._connected.set()
        logger.info("event=connected client_id=%s", opts.client_id)
        if opts.keep_alive > 0:
            self._ping_task = asyncio.create_task(self._ping_loop())

    async def _restore_state(self) -> None:
        """After (re)connect: re-subscribe, re-send unacked, flush the buffer."""
        for sub in self._subscriptions.values():
            await self._send_subscribe(sub.filter_str, sub.qos)
        for pending in list(self._window.values()):
            dup = codec.Publish(
                topic=pending.publish.topic, payload=pending.publish.payload,
                qos=1, dup=True, packet_id=pending.publish.packet_id,
            )
            self._writer.write(codec.encode_packet(dup))
        offline, self._offline = self._offline, []
        for pending in offline:
            self._transmit(pending)
        if self._writer is not None:
            await self._writer.drain()

    async def _ping_loop(self) -> None:
        interval = max(self.options.keep_alive / 2.0, 0.5)
        try:
            while self.connected:
                await asyncio.sleep(interval)
                if self._writer is not None:
                    self._writer.write(codec.encode_packet(codec.PingReq()))
                    await self._writer.drain()
        except (asyncio.CancelledError, ConnectionResetError, BrokenPipeError):
            pass

    async def _read_one(self, reader: asyncio.StreamReader,
                        buffer: bytearray) -> codec.Packet:
        while True:
            result = codec.decode_packet(bytes(buffer))
            if result is not None:
                packet, consumed = result
                del buffer[:consumed]
                return packet
            chunk = await reader.read(4096)
            if not chunk:
                raise ConnectionResetError("stream closed")
            buffer.extend(chunk)

    async def _read_loop(self) -> None:
        assert self._reader is not None
        while True:
            packet = await self._read_one(self._reader, self._read_buffer)
            if isinstance(packet, codec.Publish):
                self._inbound.put_nowait(packet)
            elif isinstance(packet, codec.PubAck):
                pending = self._window.pop(packet.packet_id, None)
                if pending is not None:
                    pending.receipt._settle(DELIVERED)
            elif isinstance(packet, codec.SubAck):
                waiter = self._suback_waiters.pop(packet.packet_id, None)
                if waiter is not None and not waiter.done():
                    waiter.set_result(packet.return_codes)
            # PingResp and UnsubAck need no action

    # -- publish ----------------------------------------------------------------

    def _next_packet_id(self) -> int:
        for pid in self._packet_ids:
            if pid not in self._window and pid not in self._suback_waiters:
                return pid
        raise RuntimeError("unreachable")

    def _transmit(self, pending: _PendingPublish) -> None:
        publish = pending.publish
        if publish.qos == 1:
            self._window[publish.packet_id] = pending
        assert self._writer is not None
        self._writer.write(codec.encode_packet(publish))
        if publish.qos == 0:
            pending.receipt._settle(DELIVERED)

    def publish(self, topic: str, payload: bytes, qos: int | None = None) -> Receipt:
        """Queue one message; returns a :class:`Receipt` (see class docs)."""
        if qos is None:
            qos = self.options.default_qos
        if qos not in (0, 1):
            raise ValueError("qos must be 0 or 1")
        if len(payload) > codec.MAX_PAYLOAD_BYTES:
            raise PayloadTooLarge(f"{len(payload)} bytes")
        codec.validate_publish_topic(topic)

        receipt = Receipt()
        publish = codec.Publish(
            topic=topic, payload=bytes(payload), qos=qos,
            packet_id=self._next_packet_id() if qos == 1 else None,
        )
        pending = _PendingPublish(publish=publish, receipt=receipt)
        if self.connected:
            self._transmit(pending)
        elif self.options.buffering:
            if len(self._offline) >= self.options.buffer_size:
                oldest = self._offline.pop(0)
                oldest.receipt._settle(DROPPED)
                self.drop_counter += 1
            self._offline.append(pending)
            receipt._mark_buffered()
        else:
            raise Disconnected("not connected and buffering disabled")
        return receipt

    # -- subscribe ----------------------------------------------------------------

    async def subscribe(self, filter_str: str, handler, qos: int = 1) -> None:
        """Register ``handler(topic, payload)`` for deliveries matching the
        filter. Survives reconnects. Raises :class:`InvalidFilter` early."""
        parsed = validate_filter(filter_str)
        sub = self._subscriptions.get(filter_str)
        if sub is None:
            sub = _Subscription(filter_str=filter_str, parsed=parsed, qos=qos)
            self._subscriptions[filter_str] = sub
        sub.handlers.append(handler)
        if self.connected:
            await self._send_subscribe(filter_str, qos)

    async def _send_subscribe(self, filter_str: str, qos: int) -> None:
        pid = self._next_packet_id()
        waiter: asyncio.Future = asyncio.get_event_loop().create_future()
        self._suback_waiters[pid] = waiter
        assert self._writer is not None
        self._writer.write(codec.encode_packet(
            codec.Subscribe(packet_id=pid, topics=((filter_str, qos),))
        ))
        await self._writer.drain()
        codes = await asyncio.wait_for(waiter, self.options.handshake_timeout)
        if any(c == codec.GRANT_FAILURE for c in codes):
            raise InvalidFilter(f"broker rejected filter {filter_str!r}")

    async def _dispatch_loop(self) -> None:
        """Serialized handler execution in delivery order; a QoS 1 delivery
        is acknowledged only after its handlers finish (at-least-once)."""
        while True:
            publish: codec.Publish = await self._inbound.get()
            for sub in list(self._subscriptions.values()):
                if not topic_matches(sub.parsed, publish.topic):
                    continue
                for handler in sub.handlers:
                    try:
                        result = handler(publish.topic, publish.payload)
                        if inspect.isawaitable(result):
                            await result
                    except Exception:
                        logger.exception("event=handler_error client_id=%s topic=%s",
                                         self.options.client_id, publish.topic)
            if publish.qos == 1 and self.connected and self._writer is not None:
                self._writer.write(codec.encode_packet(
                    codec.PubAck(packet_id=publish.packet_id)
                ))


async def connect(options: ClientOptions) -> MqttClient:
    """Convenience: build and connect a client handle."""
    return await MqttClient(options).connect()
