"""Embedded HTTP server: uvicorn run as a task inside the host event loop."""

from __future__ import annotations

import asyncio
import contextlib

import uvicorn


class _EmbeddedServer(uvicorn.Server):
    @contextlib.contextmanager
    def capture_signals(self):
        # The supervisor owns process signals; uvicorn must not intercept
        # SIGINT/SIGTERM or re-raise them on shutdown.
        yield


class ApiServer:
    """Serve a FastAPI app on the loop that created this object."""

    def __init__(self, app, host: str = "127.0.0.1", port: int = 8080):
        config = uvicorn.Config(app, host=host, port=port,
                                log_level="warning", access_log=False)
        self._server = _EmbeddedServer(config)
        self._task: asyncio.Task | None = None

    @property
    def address(self) -> tuple[str, int]:
        sockets = self._server.servers[0].sockets
        host, port = sockets[0].getsockname()[:2]
        return host, port

    async def start(self, timeout: float = 10.0) -> tuple[str, int]:
        self._task = asyncio.create_task(self._server.serve())
        deadline = asyncio.get_event_loop().time() + timeout
        while not self._server.started:
            if self._task.done():
                self._task.result()  # surface the startup exception
                raise RuntimeError("server exited before startup completed")
            if asyncio.get_event_loop().time() > deadline:
                raise TimeoutError("http server did not start in time")
            await asyncio.sleep(0.01)
        return self.address

    async def stop(self) -> None:
        if self._task is None:
            return
        self._server.should_exit = True
        try:
            await asyncio.wait_for(self._task, 10.0)
        except asyncio.TimeoutError:
            self._task.cancel()
        self._task = None
