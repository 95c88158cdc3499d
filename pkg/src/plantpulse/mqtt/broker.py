"""The central pub/sub hub: sessions, subscriptions, and publish routing.

Clean sessions only; the retain flag is parsed but ignored (publishers here
re-emit every period, so a late subscriber waits at most one period). QoS 1
deliveries are tracked in a per-session window and retransmitted with the
dup flag; a client that never acks is disconnected after bounded retries.

Deliveries destined for one session are serialized in arrival order by a
per-session writer task; routing itself runs inline in the publisher's
read loop, which is what preserves per-publisher ordering.
"""

from __future__ import annotations

import asyncio
import itertools
import logging
import time
from dataclasses import dataclass, field

from . import codec
from .topics import InvalidFilter, TopicFilter, topic_matches, validate_filter

logger = logging.getLogger(__name__)

FIRST_PACKET_TIMEOUT = 10.0
MAINTENANCE_TICK = 0.25


@dataclass
class BrokerConfig:
    host: str = "0.0.0.0"
    port: int = 1883
    in_flight_limit: int = 32
    max_payload: int = codec.MAX_PAYLOAD_BYTES
    keep_alive_grace: float = 1.5
    max_connections: int = 64
    retry_interval: float = 5.0
    max_retries: int = 3

    def __post_init__(self):
        if self.in_flight_limit < 1:
            raise ValueError("in-flight limit must be >= 1")
        if self.max_payload > codec.MAX_PAYLOAD_BYTES:
            raise ValueError("max payload exceeds codec bound")


@dataclass
class _InFlight:
    packet_id: int
    publish: codec.Publish
    attempts: int
    deadline: float


class Session:
    def __init__(self, client_id: str, keep_alive: int, writer: asyncio.StreamWriter,
                 broker: "Broker"):
        self.client_id = client_id
        self.keep_alive = keep_alive
        self.writer = writer
        self.broker = broker
        self.subscriptions: dict[str, tuple[TopicFilter, int]] = {}
        self.last_activity = broker.clock()
        self.delivery_queue: asyncio.Queue = asyncio.Queue()
        self.window: dict[int, _InFlight] = {}
        self.window_slots = asyncio.Semaphore(broker.config.in_flight_limit)
        self._packet_ids = itertools.cycle(range(1, 0x10000))
        self.closed = False
        self.deliver_task: asyncio.Task | None = None

    def touch(self) -> None:
        self.last_activity = self.broker.clock()

    def next_packet_id(self) -> int:
        for pid in self._packet_ids:
            if pid not in self.window:
                return pid
        raise RuntimeError("unreachable")  # cycle() never terminates

    def send(self, packet: codec.Packet) -> None:
        if not self.closed:
            self.writer.write(codec.encode_packet(packet))

    async def deliver_loop(self) -> None:
        try:
            while True:
                publish: codec.Publish = await self.delivery_queue.get()
                if publish.qos == 0:
                    self.send(publish)
                else:
                    await self.window_slots.acquire()
                    if self.closed:
                        return
                    pid = self.next_packet_id()
                    tracked = codec.Publish(
                        topic=publish.topic, payload=publish.payload,
                        qos=1, packet_id=pid,
                    )
                    self.window[pid] = _InFlight(
                        packet_id=pid, publish=tracked, attempts=1,
                        deadline=self.broker.clock() + self.broker.config.retry_interval,
                    )
                    self.send(tracked)
                await self.writer.drain()
        except (asyncio.CancelledError, ConnectionResetError, BrokenPipeError):
            pass

    def ack(self, packet_id: int) -> None:
        entry = self.window.pop(packet_id, None)
        if entry is None:
            logger.warning("event=puback_unknown client_id=%s packet_id=%d",
                           self.client_id, packet_id)
            return
        self.window_slots.release()

    def retransmit_due(self, now: float) -> bool:
        """Resend overdue window entries; False when the session must die."""
        for entry in list(self.window.values()):
            if now < entry.deadline:
                continue
            if entry.attempts > self.broker.config.max_retries:
                logger.warning("event=retry_exhausted client_id=%s packet_id=%d",
                               self.client_id, entry.packet_id)
                return False
            entry.attempts += 1
            entry.deadline = now + self.broker.config.retry_interval
            dup = codec.Publish(
                topic=entry.publish.topic, payload=entry.publish.payload,
                qos=1, dup=True, packet_id=entry.packet_id,
            )
            self.send(dup)
        return True


class Broker:
    """Accepts stream connections and routes publishes to subscriptions."""

    def __init__(self, config: BrokerConfig | None = None, *, clock=time.monotonic):
        self.config = config or BrokerConfig()
        self.clock = clock
        self.sessions: dict[str, Session] = {}
        self.stats = {"published": 0, "delivered": 0, "connections": 0}
        self._server: asyncio.AbstractServer | None = None
        self._maintenance: asyncio.Task | None = None
        self._connections = 0

    # -- lifecycle -----------------------------------------------------------

    @property
    def address(self) -> tuple[str, int]:
        if self._server is None:
            raise RuntimeError("broker not started")
        host, port = self._server.sockets[0].getsockname()[:2]
        return host, port

    async def start(self) -> tuple[str, int]:
        self._server = await asyncio.start_server(
            self._handle_connection, self.config.host, self.config.port
        )
        self._maintenance = asyncio.create_task(self._maintenance_loop())
        logger.info("event=broker_listening addr=%s:%d", *self.address)
        return self.address

    async def stop(self) -> None:
        if self._maintenance is not None:
            self._maintenance.cancel()
            self._maintenance = None
        for session in list(self.sessions.values()):
            self._close_session(session, "broker_stopping")
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None

    # -- introspection (used by tests and the client contract) ---------------

    def session_count(self) -> int:
        return len(self.sessions)

    def subscription_count(self) -> int:
        return sum(len(s.subscriptions) for s in self.sessions.values())

    def subscriptions_of(self, client_id: str) -> set[str]:
        session = self.sessions.get(client_id)
        return set(session.subscriptions) if session else set()

    # -- core operations ------------------------------------------------------

    def register_session(self, client_id: str, keep_alive: int,
                         writer: asyncio.StreamWriter) -> Session:
        old = self.sessions.get(client_id)
        if old is not None:
            logger.info("event=takeover client_id=%s", client_id)
            self._close_session(old, "takeover")
        session = Session(client_id, keep_alive, writer, self)
        session.deliver_task = asyncio.create_task(session.deliver_loop())
        self.sessions[client_id] = session
        return session

    def subscribe(self, session: Session, pkt: codec.Subscribe) -> codec.SubAck:
        codes = []
        for filter_str, requested_qos in pkt.topics:
            try:
                parsed = validate_filter(filter_str)
            except InvalidFilter:
                codes.append(codec.GRANT_FAILURE)
                continue
            granted = min(requested_qos, 1)
            session.subscriptions[filter_str] = (parsed, granted)
            codes.append(granted)
        return codec.SubAck(packet_id=pkt.packet_id, return_codes=tuple(codes))

    def unsubscribe(self, session: Session, pkt: codec.Unsubscribe) -> codec.UnsubAck:
        for filter_str in pkt.topics:
            session.subscriptions.pop(filter_str, None)
        return codec.UnsubAck(packet_id=pkt.packet_id)

    def route_publish(self, origin: Session | None, pkt: codec.Publish) -> int:
        """Enqueue one delivery per matching subscription; returns the count."""
        self.stats["published"] += 1
        deliveries = 0
        for session in self.sessions.values():
            for parsed, granted in session.subscriptions.values():
                if topic_matches(parsed, pkt.topic):
                    out_qos = min(pkt.qos, granted)
                    session.delivery_queue.put_nowait(
                        codec.Publish(topic=pkt.topic, payload=pkt.payload, qos=out_qos)
                    )
                    deliveries += 1
        self.stats["delivered"] += deliveries
        return deliveries

    def expire_idle_sessions(self, now: float) -> list[str]:
        """Close sessions silent past keep-alive x grace; 0 disables expiry."""
        expired = []
        for session in list(self.sessions.values()):
            if session.keep_alive <= 0:
                continue
            if now - session.last_activity > session.keep_alive * self.config.keep_alive_grace:
                expired.append(session.client_id)
                logger.info("event=keepalive_expired client_id=%s", session.client_id)
                self._close_session(session, "keepalive")
        return expired

    # -- internals ------------------------------------------------------------

    def _close_session(self, session: Session, reason: str) -> None:
        if session.closed:
            return
        session.closed = True
        if self.sessions.get(session.client_id) is session:
            del self.sessions[session.client_id]
        if session.deliver_task is not None:
            session.deliver_task.cancel()
        session.window_slots.release()  # unblock a deliver loop stuck on a full window
        session.writer.close()
        logger.info("event=session_closed client_id=%s reason=%s",
                    session.client_id, reason)

    async def _maintenance_loop(self) -> None:
        while True:
            await asyncio.sleep(MAINTENANCE_TICK)
            now = self.clock()
            self.expire_idle_sessions(now)
            for session in list(self.sessions.values()):
                if not session.retransmit_due(now):
                    self._close_session(session, "retry_exhausted")

    async def _read_packet(self, reader: asyncio.StreamReader,
                           buffer: bytearray) -> codec.Packet | None:
        """One decoded packet from the stream, or None at EOF."""
        while True:
            result = codec.decode_packet(bytes(buffer))
            if result is not None:
                packet, consumed = result
                del buffer[:consumed]
                return packet
            chunk = await reader.read(4096)
            if not chunk:
                return None
            buffer.extend(chunk)

    async def _handle_connection(self, reader: asyncio.StreamReader,
                                 writer: asyncio.StreamWriter) -> None:
        if self._connections >= self.config.max_connections:
            logger.warning("event=connection_limit detail=refusing")
            writer.close()
            return
        self._connections += 1
        self.stats["connections"] += 1
        session: Session | None = None
        buffer = bytearray()
        try:
            first = await asyncio.wait_for(
                self._read_packet(reader, buffer), FIRST_PACKET_TIMEOUT
            )
            if not isinstance(first, codec.Connect):
                logger.warning("event=protocol_violation detail=first_packet_not_connect")
                return
            if not first.client_id:
                logger.warning("event=protocol_violation detail=empty_client_id")
                return
            session = self.register_session(first.client_id, first.keep_alive, writer)
            session.send(codec.ConnAck(return_code=0))
            await writer.drain()
            logger.info("event=connect client_id=%s keep_alive=%d",
                        first.client_id, first.keep_alive)
            await self._session_loop(session, reader, buffer)
        except (asyncio.TimeoutError, asyncio.IncompleteReadError,
                ConnectionResetError, BrokenPipeError):
            pass
        except codec.MalformedPacket as e:
            cid = session.client_id if session else "?"
            logger.warning("event=malformed_packet client_id=%s detail=%s", cid, e)
        finally:
            self._connections -= 1
            if session is not None and self.sessions.get(session.client_id) is session:
                self._close_session(session, "disconnect")
            else:
                writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionResetError, BrokenPipeError):
                pass

    async def _session_loop(self, session: Session, reader: asyncio.StreamReader,
                            buffer: bytearray) -> None:
        while not session.closed:
            packet = await self._read_packet(reader, buffer)
            if packet is None:
                return
            session.touch()
            if isinstance(packet, codec.Connect):
                logger.warning("event=protocol_violation client_id=%s "
                               "detail=duplicate_connect", session.client_id)
                return
            if isinstance(packet, codec.Publish):
                if len(packet.payload) > self.config.max_payload:
                    logger.warning("event=oversized_payload client_id=%s size=%d",
                                   session.client_id, len(packet.payload))
                    return
                self.route_publish(session, packet)
                if packet.qos == 1:
                    session.send(codec.PubAck(packet_id=packet.packet_id))
                    await session.writer.drain()
            elif isinstance(packet, codec.Subscribe):
                session.send(self.subscribe(session, packet))
                await session.writer.drain()
            elif isinstance(packet, codec.Unsubscribe):
                session.send(self.unsubscribe(session, packet))
                await session.writer.drain()
            elif isinstance(packet, codec.PubAck):
                session.ack(packet.packet_id)
            elif isinstance(packet, codec.PingReq):
                session.send(codec.PingResp())
                await session.writer.drain()
            elif isinstance(packet, codec.Disconnect):
                return
            # ConnAck/SubAck/UnsubAck/PingResp from a client are ignored
