"""HTTP surface over the store: login, tables, ranges, and a live feed.

Routes:
    POST /api/login                      {user, password} -> {token}
    GET  /api/streams                    stream descriptors
    GET  /api/streams/{id}/latest        newest sample, table-rendered
    GET  /api/streams/{id}/range         ?from=&to=&limit=&order=&cursor=
    GET  /api/live?streams=a,b           newline-delimited JSON events
    GET  /api/users                      admin only
    GET  /healthz                        unauthenticated

Everything except login and healthz requires ``Authorization: Bearer``.
Query timestamps accept ``YYYY-MM-DD HH:MM:SS`` (UTC) or epoch millis;
rendered times use the same format, also UTC.

The live feed pushes each stored sample as one line; a heartbeat line goes
out on an idle connection. A client that falls a full queue behind is
disconnected rather than allowed to stall the writer.
"""

from __future__ import annotations

import asyncio
import contextlib
import json
import logging
import time
from datetime import datetime, timezone

from fastapi import Depends, FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response, StreamingResponse

from ..ingest.schema import STREAMS, TelemetrySample
from ..ingest.store import InvalidRange, UnknownStream
from .auth import AuthStore, LoginRateLimiter, SessionManager, SessionToken

logger = logging.getLogger(__name__)

TIME_FORMAT = "%Y-%m-%d %H:%M:%S"
LIVE_QUEUE_LIMIT = 1000
HEARTBEAT_SECONDS = 15.0
FOLLOWER_POLL_SECONDS = 0.1
DEFAULT_PAGE_LIMIT = 1000

_OVERFLOW = object()


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        self.status = status
        self.message = message
        super().__init__(message)


def render_time(ms: int) -> str:
    return datetime.fromtimestamp(ms / 1000, tz=timezone.utc).strftime(TIME_FORMAT)


def parse_time(value: str) -> int:
    """Epoch millis from either the documented format or raw millis."""
    text = value.strip()
    if not text:
        raise ValueError("empty timestamp")
    if text.lstrip("-").isdigit():
        return int(text)
    dt = datetime.strptime(text, TIME_FORMAT).replace(tzinfo=timezone.utc)
    return int(dt.timestamp() * 1000)


def _row(sample: TelemetrySample) -> dict:
    return {"time": render_time(sample.ingest_ts), **sample.fields}


def create_app(
    reader,
    auth: AuthStore,
    *,
    sessions: SessionManager | None = None,
    limiter: LoginRateLimiter | None = None,
    cors_origins: tuple[str, ...] = (),
    health=None,
    heartbeat_seconds: float = HEARTBEAT_SECONDS,
    follower_poll_seconds: float = FOLLOWER_POLL_SECONDS,
    clock=time.time,
) -> FastAPI:
    """Wire the API around any object with the store reader interface."""
    sessions = sessions or SessionManager(clock=clock)
    limiter = limiter or LoginRateLimiter(clock=clock)

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        # A follower reader only sees new records when polled; keep it fresh.
        poll_task = None
        if hasattr(reader, "poll"):
            async def poll_loop():
                while True:
                    reader.poll()
                    await asyncio.sleep(follower_poll_seconds)

            poll_task = asyncio.create_task(poll_loop())
        try:
            yield
        finally:
            if poll_task is not None:
                poll_task.cancel()
                with contextlib.suppress(asyncio.CancelledError):
                    await poll_task

    app = FastAPI(title="plantpulse monitor", docs_url=None, redoc_url=None,
                  lifespan=lifespan)
    if cors_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=list(cors_origins),
            allow_methods=["GET", "POST"],
            allow_headers=["Authorization", "Content-Type"],
        )

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return JSONResponse({"error": exc.message}, status_code=exc.status)

    def require_session(request: Request) -> SessionToken:
        header = request.headers.get("authorization", "")
        session = None
        if header.lower().startswith("bearer "):
            session = sessions.validate(header[7:].strip())
        if session is None:
            raise ApiError(401, "unauthorized")
        return session

    # -- routes ---------------------------------------------------------------

    @app.post("/api/login")
    async def login(request: Request):
        try:
            body = await request.json()
        except json.JSONDecodeError:
            raise ApiError(400, "body must be JSON")
        user = body.get("user")
        password = body.get("password")
        if not isinstance(user, str) or not isinstance(password, str):
            raise ApiError(400, "user and password required")
        if not limiter.allowed(user):
            logger.warning("event=login_rate_limited user=%s", user)
            raise ApiError(429, "too many attempts")
        account = auth.verify(user, password)
        if account is None:
            limiter.record_failure(user)
            # identical body for unknown user and wrong password
            raise ApiError(401, "invalid credentials")
        token = sessions.issue(account)
        logger.info("event=login user=%s role=%s", account.user_id, account.role)
        return {"token": token.token}

    @app.get("/api/streams")
    async def list_streams(session: SessionToken = Depends(require_session)):
        counts = reader.stream_stats()
        return {
            "streams": [
                {
                    "id": schema.stream,
                    "fields": list(schema.fields),
                    "units": schema.units,
                    "count": counts.get(schema.stream, 0),
                }
                for schema in STREAMS.values()
            ]
        }

    @app.get("/api/streams/{stream_id}/latest")
    async def latest(stream_id: str, session: SessionToken = Depends(require_session)):
        try:
            sample = reader.latest(stream_id)
        except UnknownStream:
            raise ApiError(404, f"unknown stream {stream_id!r}")
        if sample is None:
            return Response(status_code=204)
        return _row(sample)

    @app.get("/api/streams/{stream_id}/range")
    async def get_range(
        stream_id: str,
        request: Request,
        session: SessionToken = Depends(require_session),
    ):
        params = request.query_params
        try:
            from_ts = parse_time(params.get("from", ""))
            to_ts = parse_time(params.get("to", ""))
        except ValueError:
            raise ApiError(400, "from and to must be 'YYYY-MM-DD HH:MM:SS' or epoch millis")
        try:
            limit = int(params.get("limit", DEFAULT_PAGE_LIMIT))
            cursor = int(params["cursor"]) if "cursor" in params else None
        except ValueError:
            raise ApiError(400, "limit and cursor must be integers")
        order = params.get("order", "asc")
        try:
            rows, next_cursor, total = reader.query_range(
                stream_id, from_ts, to_ts, limit=limit, order=order, after_seq=cursor
            )
        except UnknownStream:
            raise ApiError(404, f"unknown stream {stream_id!r}")
        except InvalidRange as e:
            raise ApiError(400, str(e))
        return {
            "rows": [_row(s) for s in rows],
            "next_cursor": str(next_cursor) if next_cursor is not None else None,
            "total": total,
        }

    @app.get("/api/users")
    async def list_users(session: SessionToken = Depends(require_session)):
        if session.role != "admin":
            raise ApiError(403, "admin role required")
        return {"users": auth.list_users()}

    @app.get("/api/live")
    async def live(request: Request, session: SessionToken = Depends(require_session)):
        raw = request.query_params.get("streams", "")
        wanted = tuple(s for s in raw.split(",") if s) or tuple(STREAMS)
        for name in wanted:
            if name not in STREAMS:
                raise ApiError(404, f"unknown stream {name!r}")

        queue: asyncio.Queue = asyncio.Queue(maxsize=LIVE_QUEUE_LIMIT)

        def enqueue(sample: TelemetrySample) -> None:
            if sample.stream not in wanted:
                return
            try:
                queue.put_nowait(sample)
            except asyncio.QueueFull:
                # slow client: drop the backlog and signal a disconnect
                while not queue.empty():
                    queue.get_nowait()
                queue.put_nowait(_OVERFLOW)

        async def event_stream():
            reader.add_listener(enqueue)
            try:
                while True:
                    if sessions.validate(session.token) is None:
                        break  # token expired mid-stream
                    try:
                        item = await asyncio.wait_for(queue.get(), heartbeat_seconds)
                    except asyncio.TimeoutError:
                        yield json.dumps({"heartbeat": render_time(int(clock() * 1000))}) + "\n"
                        continue
                    if item is _OVERFLOW:
                        logger.warning("event=live_client_overflow user=%s", session.user_id)
                        break
                    yield json.dumps({
                        "stream": item.stream,
                        "time": render_time(item.ingest_ts),
                        "seq": item.seq,
                        "ts_ms": item.ingest_ts,
                        "fields": item.fields,
                    }) + "\n"
            finally:
                reader.remove_listener(enqueue)

        return StreamingResponse(event_stream(), media_type="application/x-ndjson")

    @app.get("/healthz")
    async def healthz():
        components = health() if health is not None else {}
        components.setdefault("api", "up")
        return {"status": "ok", "components": components}

    return app
