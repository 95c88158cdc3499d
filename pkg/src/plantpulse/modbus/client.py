"""Polling client: one outstanding request per link, timeout plus retries.

Modbus is half-duplex, so a transaction is strictly send-then-wait. A
response that never arrives (slave silent on a corrupt frame) times out;
after the configured retries the poll fails as a unit.
"""

from __future__ import annotations

import asyncio
import logging
import struct

from . import frames
from .registers import RegisterMap

logger = logging.getLogger(__name__)


class PollFailed(frames.ModbusError):
    """No valid response after all retries."""


class ModbusClient:
    def __init__(self, host: str, port: int, *, unit_id: int = 1,
                 timeout: float = 0.2, retries: int = 2):
        self.host = host
        self.port = port
        self.unit_id = unit_id
        self.timeout = timeout
        self.retries = retries
        self._reader: asyncio.StreamReader | None = None
        self._writer: asyncio.StreamWriter | None = None
        self._lock = asyncio.Lock()

    async def connect(self) -> None:
        self._reader, self._writer = await asyncio.open_connection(self.host, self.port)

    async def close(self) -> None:
        if self._writer is not None:
            self._writer.close()
            try:
                await self._writer.wait_closed()
            except (ConnectionResetError, BrokenPipeError):
                pass
            self._reader = self._writer = None

    @property
    def connected(self) -> bool:
        return self._writer is not None

    async def _read_response(self) -> bytes:
        assert self._reader is not None
        head = await self._reader.readexactly(2)
        if head[1] & frames.EXCEPTION_FLAG:
            return head + await self._reader.readexactly(3)
        byte_count = await self._reader.readexactly(1)
        return head + byte_count + await self._reader.readexactly(byte_count[0] + 2)

    async def transact(self, request: bytes) -> bytes:
        """Send raw frame bytes, await one length-delimited response."""
        async with self._lock:
            if self._writer is None:
                await self.connect()
            assert self._writer is not None
            self._writer.write(request)
            await self._writer.drain()
            return await asyncio.wait_for(self._read_response(), self.timeout)

    async def read_holding(self, start: int, count: int) -> list[int]:
        """Read ``count`` registers at ``start``; retries on timeout/corruption."""
        request = frames.build_read_request(self.unit_id, start, count)
        last_error: Exception | None = None
        for attempt in range(1 + self.retries):
            try:
                response = await self.transact(request)
                registers = frames.parse_response(response)
                if len(registers) != count:
                    raise frames.TruncatedFrame(
                        f"expected {count} registers, got {len(registers)}"
                    )
                return registers
            except frames.ExceptionResponse:
                raise  # the slave answered; retrying cannot change its mind
            except (asyncio.TimeoutError, frames.CrcMismatch,
                    frames.TruncatedFrame, ConnectionError,
                    asyncio.IncompleteReadError, OSError) as e:
                last_error = e
                logger.warning("poll attempt %d failed: %s", attempt + 1, e)
                await self.close()
        raise PollFailed(f"no valid response after {1 + self.retries} attempts") from last_error

    async def read_float(self, bank_layout: RegisterMap | None, name: str,
                         address: int | None = None) -> float:
        """Read one float32 field either by layout name or raw address."""
        if address is None:
            if bank_layout is None:
                raise ValueError("need a layout or an explicit address")
            address = bank_layout.layout[name].address
        hi, lo = await self.read_holding(address, 2)
        return frames.decode_float32(hi, lo)


def registers_to_floats(registers: list[int]) -> list[float]:
    """Interpret an even-length register run as consecutive float32 values."""
    if len(registers) % 2:
        raise ValueError("odd register count cannot hold float32 values")
    out = []
    for i in range(0, len(registers), 2):
        out.append(frames.decode_float32(registers[i], registers[i + 1]))
    return out


def float_bits(value: float) -> int:
    """Raw 32-bit pattern of the nearest single; handy for bit-exact checks."""
    return struct.unpack(">I", struct.pack(">f", value))[0]
