"""Modbus RTU frame codec: CRC-16, read-holding-registers, float decoding.

Only function 0x03 (read holding registers) plus its exception response is
implemented; the telemetry path is read-only polling. Frames are bit-exact
RTU images; the 3.5-character silence framing of a real serial bus is
replaced by length-aware parsing on the stream transports used here.
"""

from __future__ import annotations

import math
import struct

READ_HOLDING_REGISTERS = 0x03
EXCEPTION_FLAG = 0x80
MAX_READ_COUNT = 125

EXCEPTION_NAMES = {
    0x01: "IllegalFunction",
    0x02: "IllegalDataAddress",
    0x03: "IllegalDataValue",
    0x04: "SlaveDeviceFailure",
}


class ModbusError(Exception):
    """Base class for frame and transaction failures."""


class CountOutOfRange(ModbusError):
    pass


class CrcMismatch(ModbusError):
    pass


class TruncatedFrame(ModbusError):
    pass


class ExceptionResponse(ModbusError):
    """The slave answered with an exception frame."""

    def __init__(self, code: int):
        self.code = code
        self.name = EXCEPTION_NAMES.get(code, f"Exception{code:#04x}")
        super().__init__(f"modbus exception {code}: {self.name}")


def _crc_table() -> tuple[int, ...]:
    table = []
    for index in range(256):
        crc = index
        for _ in range(8):
            if crc & 1:
                crc = (crc >> 1) ^ 0xA001
            else:
                crc >>= 1
        table.append(crc)
    return tuple(table)


_CRC_TABLE = _crc_table()


def crc16(data: bytes) -> int:
    """CRC-16/MODBUS: reflected polynomial 0xA001, init 0xFFFF, no final xor."""
    crc = 0xFFFF
    for byte in data:
        crc = (crc >> 8) ^ _CRC_TABLE[(crc ^ byte) & 0xFF]
    return crc


def append_crc(frame: bytes) -> bytes:
    """Frame plus its CRC in wire order (low byte first)."""
    return frame + struct.pack("<H", crc16(frame))


def check_crc(frame: bytes) -> bytes:
    """Verify the trailing CRC; returns the frame without it."""
    if len(frame) < 4:
        raise TruncatedFrame(f"frame of {len(frame)} bytes too short")
    body, (wire_crc,) = frame[:-2], struct.unpack("<H", frame[-2:])
    if crc16(body) != wire_crc:
        raise CrcMismatch(
            f"crc {wire_crc:#06x} does not match computed {crc16(body):#06x}"
        )
    return body


def build_read_request(unit: int, start: int, count: int) -> bytes:
    """8-byte RTU read-holding-registers request."""
    if not 1 <= unit <= 247:
        raise ModbusError(f"unit id {unit} outside 1..247")
    if not 0 <= start <= 0xFFFF:
        raise ModbusError(f"start address {start} outside 0..65535")
    if not 1 <= count <= MAX_READ_COUNT:
        raise CountOutOfRange(f"register count {count} outside 1..{MAX_READ_COUNT}")
    return append_crc(struct.pack(">BBHH", unit, READ_HOLDING_REGISTERS, start, count))


def parse_read_request(frame: bytes) -> tuple[int, int, int]:
    """Decode a read request into (unit, start, count). CRC must verify."""
    if len(frame) != 8:
        raise TruncatedFrame(f"read request must be 8 bytes, got {len(frame)}")
    body = check_crc(frame)
    unit, function, start, count = struct.unpack(">BBHH", body)
    if function != READ_HOLDING_REGISTERS:
        raise ModbusError(f"unsupported function {function:#04x}")
    return unit, start, count


def build_read_response(unit: int, registers: list[int]) -> bytes:
    payload = struct.pack(">BBB", unit, READ_HOLDING_REGISTERS, 2 * len(registers))
    payload += struct.pack(f">{len(registers)}H", *registers)
    return append_crc(payload)


def build_exception_response(unit: int, function: int, code: int) -> bytes:
    return append_crc(struct.pack(">BBB", unit, function | EXCEPTION_FLAG, code))


def parse_response(frame: bytes) -> list[int]:
    """Registers from a read response; raises :class:`ExceptionResponse` for
    exception frames and :class:`CrcMismatch`/:class:`TruncatedFrame` for damage."""
    body = check_crc(frame)
    if len(body) < 2:
        raise TruncatedFrame("response body too short")
    function = body[1]
    if function & EXCEPTION_FLAG:
        if len(body) != 3:
            raise TruncatedFrame("exception frame must be 5 bytes")
        raise ExceptionResponse(body[2])
    if function != READ_HOLDING_REGISTERS:
        raise ModbusError(f"unsupported function {function:#04x}")
    if len(body) < 3:
        raise TruncatedFrame("missing byte count")
    byte_count = body[2]
    data = body[3:]
    if byte_count != len(data) or byte_count % 2:
        raise TruncatedFrame(
            f"byte count {byte_count} inconsistent with {len(data)} data bytes"
        )
    return list(struct.unpack(f">{byte_count // 2}H", data))


def decode_float32(hi: int, lo: int) -> float:
    """IEEE-754 single from two registers, big-endian register order.

    Non-finite bit patterns come back as NaN so callers have a single
    sentinel to test for.
    """
    value = struct.unpack(">f", struct.pack(">HH", hi, lo))[0]
    if not math.isfinite(value):
        return math.nan
    return value


def encode_float32(value: float) -> tuple[int, int]:
    """Two registers (hi, lo) holding the nearest IEEE-754 single."""
    return struct.unpack(">HH", struct.pack(">f", value))
