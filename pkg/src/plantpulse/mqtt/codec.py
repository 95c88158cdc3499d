"""Transport-free codec for the MQTT 3.1.1 packet subset used by plantpulse.

Covers CONNECT/CONNACK, PUBLISH/PUBACK (QoS 0 and 1), SUBSCRIBE/SUBACK,
UNSUBSCRIBE/UNSUBACK, PINGREQ/PINGRESP and DISCONNECT. QoS 2 and MQTT 5
properties are deliberately out: a QoS 2 publish (or any PUBREC/PUBREL/
PUBCOMP packet) decodes as malformed.

All packet classes are immutable; ``encode_packet`` and ``decode_packet``
are exact inverses for every valid packet and wire image.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

# Hard bounds so fuzzing has a defined rejection contract.
MAX_REMAINING_LENGTH = 268_435_455
MAX_STRING_BYTES = 65_535
MAX_PAYLOAD_BYTES = 256 * 1024

GRANT_FAILURE = 0x80


class CodecError(Exception):
    """Base class for codec failures."""


class EncodeError(CodecError):
    """Value cannot be represented on the wire (e.g. varint out of range)."""


class MalformedPacket(CodecError):
    """Bytes do not form a valid packet of the supported subset."""


class InvariantViolation(CodecError):
    """A Packet object handed to the encoder is internally inconsistent."""


class PacketType(IntEnum):
    """Control packet types (upper nibble of the fixed header)."""

    CONNECT = 1
    CONNACK = 2
    PUBLISH = 3
    PUBACK = 4
    SUBSCRIBE = 8
    SUBACK = 9
    UNSUBSCRIBE = 10
    UNSUBACK = 11
    PINGREQ = 12
    PINGRESP = 13
    DISCONNECT = 14


_SUPPORTED_TYPES = {t.value for t in PacketType}


def encode_remaining_length(n: int) -> bytes:
    """Encode the fixed-header length as a minimal base-128 varint (1-4 bytes)."""
    if not 0 <= n <= MAX_REMAINING_LENGTH:
        raise EncodeError(f"remaining length {n} out of range")
    out = bytearray()
    while True:
        digit = n % 128
        n //= 128
        if n > 0:
            digit |= 0x80
        out.append(digit)
        if n == 0:
            return bytes(out)


def decode_remaining_length(buf: bytes, offset: int = 0) -> tuple[int, int] | None:
    """Decode a varint starting at ``offset``.

    Returns ``(value, bytes_consumed)``, or ``None`` if the buffer ends in the
    middle of a plausible varint. Non-minimal encodings are malformed.
    """
    value = 0
    multiplier = 1
    for i in range(4):
        if offset + i >= len(buf):
            return None
        byte = buf[offset + i]
        value += (byte & 0x7F) * multiplier
        if not byte & 0x80:
            consumed = i + 1
            if consumed > len(encode_remaining_length(value)):
                raise MalformedPacket("non-minimal remaining length")
            return value, consumed
        multiplier *= 128
    raise MalformedPacket("remaining length exceeds 4 bytes")


def _encode_string(s: str) -> bytes:
    data = s.encode("utf-8")
    if len(data) > MAX_STRING_BYTES:
        raise EncodeError(f"string of {len(data)} bytes exceeds {MAX_STRING_BYTES}")
    return struct.pack(">H", len(data)) + data


def _decode_string(buf: bytes, offset: int) -> tuple[str, int]:
    raw, offset = _decode_binary(buf, offset)
    try:
        s = raw.decode("utf-8", errors="strict")
    except UnicodeDecodeError as e:
        raise MalformedPacket("invalid UTF-8 string") from e
    if "\u0000" in s:
        raise MalformedPacket("NUL character in string")
    return s, offset


def _decode_binary(buf: bytes, offset: int) -> tuple[bytes, int]:
    if offset + 2 > len(buf):
        raise MalformedPacket("truncated length prefix")
    (length,) = struct.unpack_from(">H", buf, offset)
    offset += 2
    if offset + length > len(buf):
        raise MalformedPacket("truncated field body")
    return bytes(buf[offset:offset + length]), offset + length


def _decode_uint16(buf: bytes, offset: int) -> tuple[int, int]:
    if offset + 2 > len(buf):
        raise MalformedPacket("truncated 16-bit integer")
    return struct.unpack_from(">H", buf, offset)[0], offset + 2


def _check_packet_id(packet_id: int) -> int:
    if not 1 <= packet_id <= 0xFFFF:
        raise InvariantViolation(f"packet id {packet_id} outside 1..65535")
    return packet_id


def validate_publish_topic(topic: str) -> str:
    """A publish topic: non-empty UTF-8, no wildcards, no NUL."""
    if not topic:
        raise MalformedPacket("empty publish topic")
    if "+" in topic or "#" in topic:
        raise MalformedPacket(f"wildcard in publish topic {topic!r}")
    if "\u0000" in topic:
        raise MalformedPacket("NUL in publish topic")
    if len(topic.encode("utf-8")) > MAX_STRING_BYTES:
        raise MalformedPacket("publish topic too long")
    return topic


@dataclass(frozen=True)
class Connect:
    client_id: str
    keep_alive: int = 30
    clean_session: bool = True
    # Carried verbatim for wire fidelity; the broker ignores all four.
    username: str | None = None
    password: bytes | None = None
    will_topic: str | None = None
    will_payload: bytes | None = None
    will_qos: int = 0
    will_retain: bool = False


@dataclass(frozen=True)
class ConnAck:
    return_code: int = 0
    session_present: bool = False


@dataclass(frozen=True)
class Publish:
    topic: str
    payload: bytes = b""
    qos: int = 0
    retain: bool = False
    dup: bool = False
    packet_id: int | None = None


@dataclass(frozen=True)
class PubAck:
    packet_id: int


@dataclass(frozen=True)
class Subscribe:
    packet_id: int
    # (filter string, requested qos); filters are validated by the broker,
    # not the codec, so an invalid filter can be answered with 0x80.
    topics: tuple[tuple[str, int], ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class SubAck:
    packet_id: int
    return_codes: tuple[int, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class Unsubscribe:
    packet_id: int
    topics: tuple[str, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class UnsubAck:
    packet_id: int


@dataclass(frozen=True)
class PingReq:
    pass


@dataclass(frozen=True)
class PingResp:
    pass


@dataclass(frozen=True)
class Disconnect:
    pass


Packet = (
    Connect | ConnAck | Publish | PubAck | Subscribe | SubAck
    | Unsubscribe | UnsubAck | PingReq | PingResp | Disconnect
)


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------


def _encode_connect(p: Connect) -> tuple[int, bytes]:
    if not 0 <= p.keep_alive <= 0xFFFF:
        raise InvariantViolation(f"keep-alive {p.keep_alive} outside 0..65535")
    flags = 0
    if p.clean_session:
        flags |= 0x02
    body = bytearray()
    body += _encode_string(p.client_id)
    if (p.will_topic is None) != (p.will_payload is None):
        raise InvariantViolation("will topic and payload must be set together")
    if p.will_topic is not None:
        if p.will_qos not in (0, 1, 2):
            raise InvariantViolation(f"will qos {p.will_qos} invalid")
        flags |= 0x04 | (p.will_qos << 3) | (0x20 if p.will_retain else 0)
        body += _encode_string(p.will_topic)
        body += struct.pack(">H", len(p.will_payload)) + p.will_payload
    if p.username is not None:
        flags |= 0x80
    if p.password is not None:
        if p.username is None:
            raise InvariantViolation("password without username")
        flags |= 0x40
    if p.username is not None:
        body += _encode_string(p.username)
    if p.password is not None:
        body += struct.pack(">H", len(p.password)) + p.password
    head = _encode_string("MQTT") + bytes([4, flags]) + struct.pack(">H", p.keep_alive)
    return 0, head + bytes(body)


def _encode_publish(p: Publish) -> tuple[int, bytes]:
    if p.qos not in (0, 1):
        raise InvariantViolation(f"qos {p.qos} unsupported")
    if (p.packet_id is not None) != (p.qos == 1):
        raise InvariantViolation("packet id present iff qos=1")
    if len(p.payload) > MAX_PAYLOAD_BYTES:
        raise InvariantViolation(f"payload of {len(p.payload)} bytes exceeds bound")
    try:
        validate_publish_topic(p.topic)
    except MalformedPacket as e:
        raise InvariantViolation(str(e)) from e
    flags = (p.qos << 1) | (0x08 if p.dup else 0) | (0x01 if p.retain else 0)
    body = _encode_string(p.topic)
    if p.qos == 1:
        body += struct.pack(">H", _check_packet_id(p.packet_id))
    return flags, body + p.payload


def _encode_subscribe(p: Subscribe) -> tuple[int, bytes]:
    if not p.topics:
        raise InvariantViolation("subscribe with no filters")
    body = bytearray(struct.pack(">H", _check_packet_id(p.packet_id)))
    for filt, qos in p.topics:
        if qos not in (0, 1, 2):
            raise InvariantViolation(f"requested qos {qos} invalid")
        body += _encode_string(filt)
        body.append(qos)
    return 0x02, bytes(body)


def _encode_suback(p: SubAck) -> tuple[int, bytes]:
    if not p.return_codes:
        raise InvariantViolation("suback with no return codes")
    for code in p.return_codes:
        if code not in (0, 1, GRANT_FAILURE):
            raise InvariantViolation(f"suback code {code:#x} invalid")
    return 0, struct.pack(">H", _check_packet_id(p.packet_id)) + bytes(p.return_codes)


def _encode_unsubscribe(p: Unsubscribe) -> tuple[int, bytes]:
    if not p.topics:
        raise InvariantViolation("unsubscribe with no filters")
    body = bytearray(struct.pack(">H", _check_packet_id(p.packet_id)))
    for filt in p.topics:
        body += _encode_string(filt)
    return 0x02, bytes(body)


def encode_packet(p: Packet) -> bytes:
    """Serialize a packet to its canonical wire image."""
    if isinstance(p, Connect):
        ptype, flags_body = PacketType.CONNECT, _encode_connect(p)
    elif isinstance(p, ConnAck):
        if not 0 <= p.return_code <= 255:
            raise InvariantViolation("connack return code out of range")
        ptype = PacketType.CONNACK
        flags_body = 0, bytes([0x01 if p.session_present else 0x00, p.return_code])
    elif isinstance(p, Publish):
        ptype, flags_body = PacketType.PUBLISH, _encode_publish(p)
    elif isinstance(p, PubAck):
        ptype = PacketType.PUBACK
        flags_body = 0, struct.pack(">H", _check_packet_id(p.packet_id))
    elif isinstance(p, Subscribe):
        ptype, flags_body = PacketType.SUBSCRIBE, _encode_subscribe(p)
    elif isinstance(p, SubAck):
        ptype, flags_body = PacketType.SUBACK, _encode_suback(p)
    elif isinstance(p, Unsubscribe):
        ptype, flags_body = PacketType.UNSUBSCRIBE, _encode_unsubscribe(p)
    elif isinstance(p, UnsubAck):
        ptype = PacketType.UNSUBACK
        flags_body = 0, struct.pack(">H", _check_packet_id(p.packet_id))
    elif isinstance(p, PingReq):
        ptype, flags_body = PacketType.PINGREQ, (0, b"")
    elif isinstance(p, PingResp):
        ptype, flags_body = PacketType.PINGRESP, (0, b"")
    elif isinstance(p, Disconnect):
        ptype, flags_body = PacketType.DISCONNECT, (0, b"")
    else:
        raise InvariantViolation(f"not a packet: {p!r}")
    flags, body = flags_body
    return bytes([(ptype << 4) | flags]) + encode_remaining_length(len(body)) + body


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------


def _decode_connect(flags: int, body: bytes) -> Connect:
    if flags != 0:
        raise MalformedPacket("reserved fixed-header flags set on CONNECT")
    proto, offset = _decode_string(body, 0)
    if proto != "MQTT":
        raise MalformedPacket(f"unsupported protocol name {proto!r}")
    if offset + 4 > len(body):
        raise MalformedPacket("truncated CONNECT header")
    level = body[offset]
    if level != 4:
        raise MalformedPacket(f"unsupported protocol level {level}")
    connect_flags = body[offset + 1]
    if connect_flags & 0x01:
        raise MalformedPacket("reserved CONNECT flag bit set")
    (keep_alive,) = struct.unpack_from(">H", body, offset + 2)
    offset += 4

    client_id, offset = _decode_string(body, offset)
    will_topic = will_payload = None
    will_qos = (connect_flags >> 3) & 0x03
    will_retain = bool(connect_flags & 0x20)
    if connect_flags & 0x04:
        if will_qos == 3:
            raise MalformedPacket("will qos 3 invalid")
        will_topic, offset = _decode_string(body, offset)
        will_payload, offset = _decode_binary(body, offset)
    elif will_qos or will_retain:
        raise MalformedPacket("will qos/retain set without will flag")
    username = password = None
    if connect_flags & 0x80:
        username, offset = _decode_string(body, offset)
    if connect_flags & 0x40:
        if username is None:
            raise MalformedPacket("password flag without username flag")
        password, offset = _decode_binary(body, offset)
    if offset != len(body):
        raise MalformedPacket("trailing bytes in CONNECT body")
    return Connect(
        client_id=client_id,
        keep_alive=keep_alive,
        clean_session=bool(connect_flags & 0x02),
        username=username,
        password=password,
        will_topic=will_topic,
        will_payload=will_payload,
        will_qos=will_qos if will_topic is not None else 0,
        will_retain=will_retain,
    )


def _decode_publish(flags: int, body: bytes) -> Publish:
    qos = (flags >> 1) & 0x03
    if qos == 3:
        raise MalformedPacket("publish qos 3 invalid")
    if qos == 2:
        raise MalformedPacket("qos 2 unsupported")
    topic, offset = _decode_string(body, 0)
    validate_publish_topic(topic)
    packet_id = None
    if qos == 1:
        packet_id, offset = _decode_uint16(body, offset)
        if packet_id == 0:
            raise MalformedPacket("packet id 0 invalid")
    payload = bytes(body[offset:])
    if len(payload) > MAX_PAYLOAD_BYTES:
        raise MalformedPacket(f"payload of {len(payload)} bytes exceeds bound")
    return Publish(
        topic=topic,
        payload=payload,
        qos=qos,
        retain=bool(flags & 0x01),
        dup=bool(flags & 0x08),
        packet_id=packet_id,
    )


def _decode_subscribe(body: bytes) -> Subscribe:
    packet_id, offset = _decode_uint16(body, 0)
    if packet_id == 0:
        raise MalformedPacket("packet id 0 invalid")
    topics = []
    while offset < len(body):
        filt, offset = _decode_string(body, offset)
        if offset >= len(body):
            raise MalformedPacket("subscribe entry missing qos byte")
        qos = body[offset]
        offset += 1
        if qos > 2:
            raise MalformedPacket(f"requested qos {qos} invalid")
        topics.append((filt, qos))
    if not topics:
        raise MalformedPacket("subscribe with no filters")
    return Subscribe(packet_id=packet_id, topics=tuple(topics))


def _decode_suback(body: bytes) -> SubAck:
    packet_id, offset = _decode_uint16(body, 0)
    if packet_id == 0:
        raise MalformedPacket("packet id 0 invalid")
    codes = tuple(body[offset:])
    if not codes:
        raise MalformedPacket("suback with no return codes")
    for code in codes:
        if code not in (0, 1, GRANT_FAILURE):
            raise MalformedPacket(f"suback code {code:#x} invalid")
    return SubAck(packet_id=packet_id, return_codes=codes)


def _decode_unsubscribe(body: bytes) -> Unsubscribe:
    packet_id, offset = _decode_uint16(body, 0)
    if packet_id == 0:
        raise MalformedPacket("packet id 0 invalid")
    topics = []
    while offset < len(body):
        filt, offset = _decode_string(body, offset)
        topics.append(filt)
    if not topics:
        raise MalformedPacket("unsubscribe with no filters")
    return Unsubscribe(packet_id=packet_id, topics=tuple(topics))


def _decode_packet_id_only(body: bytes) -> int:
    packet_id, offset = _decode_uint16(body, 0)
    if packet_id == 0:
        raise MalformedPacket("packet id 0 invalid")
    if offset != len(body):
        raise MalformedPacket("trailing bytes after packet id")
    return packet_id


def _require_empty(body: bytes) -> None:
    if body:
        raise MalformedPacket("unexpected body on header-only packet")


def _require_flags(flags: int, expected: int, name: str) -> None:
    if flags != expected:
        raise MalformedPacket(f"invalid fixed-header flags {flags:#x} on {name}")


def decode_packet(buf: bytes) -> tuple[Packet, int] | None:
    """Decode one packet from the front of ``buf``.

    Returns ``(packet, bytes_consumed)``; trailing bytes are left untouched.
    Returns ``None`` when the buffer is a valid prefix of an incomplete
    packet. Raises :class:`MalformedPacket` for anything unrecoverable.
    """
    if not buf:
        return None
    first = buf[0]
    ptype = first >> 4
    flags = first & 0x0F
    if ptype not in _SUPPORTED_TYPES:
        raise MalformedPacket(f"unsupported packet type {ptype}")

    varint = decode_remaining_length(buf, 1)
    if varint is None:
        return None
    remaining, varint_len = varint
    # Reject absurd sizes before waiting for bytes that can never be valid.
    if remaining > MAX_PAYLOAD_BYTES + 2 * (MAX_STRING_BYTES + 2):
        raise MalformedPacket(f"remaining length {remaining} exceeds packet bound")
    header_len = 1 + varint_len
    total = header_len + remaining
    if len(buf) < total:
        return None
    body = bytes(buf[header_len:total])

    kind = PacketType(ptype)
    if kind is PacketType.CONNECT:
        packet: Packet = _decode_connect(flags, body)
    elif kind is PacketType.CONNACK:
        _require_flags(flags, 0, "CONNACK")
        if len(body) != 2:
            raise MalformedPacket("CONNACK body must be 2 bytes")
        if body[0] > 1:
            raise MalformedPacket("invalid CONNACK acknowledge flags")
        packet = ConnAck(return_code=body[1], session_present=bool(body[0]))
    elif kind is PacketType.PUBLISH:
        packet = _decode_publish(flags, body)
    elif kind is PacketType.PUBACK:
        _require_flags(flags, 0, "PUBACK")
        packet = PubAck(packet_id=_decode_packet_id_only(body))
    elif kind is PacketType.SUBSCRIBE:
        _require_flags(flags, 0x02, "SUBSCRIBE")
        packet = _decode_subscribe(body)
    elif kind is PacketType.SUBACK:
        _require_flags(flags, 0, "SUBACK")
        packet = _decode_suback(body)
    elif kind is PacketType.UNSUBSCRIBE:
        _require_flags(flags, 0x02, "UNSUBSCRIBE")
        packet = _decode_unsubscribe(body)
    elif kind is PacketType.UNSUBACK:
        _require_flags(flags, 0, "UNSUBACK")
        packet = UnsubAck(packet_id=_decode_packet_id_only(body))
    elif kind is PacketType.PINGREQ:
        _require_flags(flags, 0, "PINGREQ")
        _require_empty(body)
        packet = PingReq()
    elif kind is PacketType.PINGRESP:
        _require_flags(flags, 0, "PINGRESP")
        _require_empty(body)
        packet = PingResp()
    else:
        _require_flags(flags, 0, "DISCONNECT")
        _require_empty(body)
        packet = Disconnect()
    return packet, total
