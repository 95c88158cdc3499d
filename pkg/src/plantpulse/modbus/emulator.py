"""Register-bank server: the wire-facing half of the emulated meter.

Speaks RTU frames over a local TCP stream. A request that fails CRC gets
no response at all, mirroring a real slave staying silent on a corrupt
frame; the polling client surfaces that as a timeout.
"""

from __future__ import annotations

import asyncio
import logging

from . import frames
from .registers import RegisterMap

logger = logging.getLogger(__name__)

REQUEST_SIZE = 8


def serve_request(bank: RegisterMap, unit_id: int, request: bytes) -> bytes | None:
    """Response bytes for one request, or None for RTU silence."""
    try:
        unit, start, count = frames.parse_read_request(request)
    except frames.CrcMismatch:
        return None
    except frames.ModbusError:
        # Parseable CRC but unsupported function: answer IllegalFunction.
        try:
            frames.check_crc(request)
        except frames.ModbusError:
            return None
        return frames.build_exception_response(unit_id, request[1], 0x01)
    if unit != unit_id:
        return None
    if not 1 <= count <= frames.MAX_READ_COUNT:
        return frames.build_exception_response(unit_id, frames.READ_HOLDING_REGISTERS, 0x03)
    block = bank.read_block(start, count)
    if block is None:
        return frames.build_exception_response(unit_id, frames.READ_HOLDING_REGISTERS, 0x02)
    return frames.build_read_response(unit_id, block)


class MeterEmulator:
    """TCP-attached register bank polled by the bridge."""

    def __init__(self, bank: RegisterMap, *, unit_id: int = 1,
                 host: str = "127.0.0.1", port: int = 0):
        self.bank = bank
        self.unit_id = unit_id
        self._host = host
        self._port = port
        self._server: asyncio.AbstractServer | None = None

    @property
    def address(self) -> tuple[str, int]:
        if self._server is None:
            raise RuntimeError("emulator not started")
        host, port = self._server.sockets[0].getsockname()[:2]
        return host, port

    async def start(self) -> tuple[str, int]:
        self._server = await asyncio.start_server(self._handle, self._host, self._port)
        logger.info("meter emulator listening on %s:%d", *self.address)
        return self.address

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None

    async def _handle(self, reader: asyncio.StreamReader,
                      writer: asyncio.StreamWriter) -> None:
        try:
            while True:
                request = await reader.readexactly(REQUEST_SIZE)
                response = serve_request(self.bank, self.unit_id, request)
                if response is not None:
                    writer.write(response)
                    await writer.drain()
        except (asyncio.IncompleteReadError, ConnectionResetError):
            pass
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionResetError, BrokenPipeError):
                pass
