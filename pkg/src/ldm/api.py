"""HTTP/JSON service boundary.

Every endpoint except ``POST /v1/subscribe`` needs ``Authorization: Bearer
<token>``; the token is checked before the request body is read. Response
bodies are the canonical serialization of the module-level call result.
"""

from __future__ import annotations

import contextlib
import json
import logging
import socket
import threading
from typing import Any, Iterator

import uvicorn
from fastapi import FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from starlette.exceptions import HTTPException as StarletteHTTPException

from . import wire
from .auth import DeviceKind
from .config import ServiceConfig
from .errors import InvalidToken, LdmError, ValidationError
from .geo import GeoPoint
from .service import LocalDynamicMap
from .store import BoundingBox, LayerKind

log = logging.getLogger(__name__)


class BindFailure(LdmError):
    code = "bind_failure"


class WireResponse(JSONResponse):
    def render(self, content: Any) -> bytes:
        return wire.dumps(content).encode("utf-8")


def error_response(status: int, code: str, message: str) -> WireResponse:
    return WireResponse({"code": code, "message": message}, status_code=status)


def bearer_token(request: Request) -> str | None:
    header = request.headers.get("authorization")
    if not header:
        return None
    scheme, _, value = header.partition(" ")
    if scheme.lower() != "bearer" or not value.strip():
        return None
    return value.strip()


async def _json_body(request: Request) -> Any:
    raw = await request.body()
    try:
        return json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ValidationError(f"request body is not valid JSON: {exc}") from exc


def create_app(service: LocalDynamicMap) -> FastAPI:
    app = FastAPI(title="Local Dynamic Map", docs_url=None, redoc_url=None, openapi_url=None)
    app.state.ldm = service

    @app.exception_handler(LdmError)
    async def _ldm_error(request: Request, exc: LdmError) -> WireResponse:
        return error_response(exc.http_status, exc.code, exc.message)

    @app.exception_handler(RequestValidationError)
    async def _request_error(request: Request, exc: RequestValidationError) -> WireResponse:
        detail = "; ".join(f"{'.'.join(str(p) for p in e.get('loc', ()))}: {e.get('msg')}" for e in exc.errors())
        return error_response(422, "validation_error", detail)

    @app.exception_handler(StarletteHTTPException)
    async def _http_error(request: Request, exc: StarletteHTTPException) -> WireResponse:
        code = "not_found" if exc.status_code == 404 else "bad_request"
        return error_response(exc.status_code, code, str(exc.detail))

    def authenticate(request: Request) -> str:
        return service.auth.verify(bearer_token(request))

    @app.post("/v1/subscribe")
    async def subscribe(request: Request) -> WireResponse:
        body = wire.require_fields(await _json_body(request), ("kind",), ("device_id", "region_tag"), "subscribe")
        device_id, token = service.auth.subscribe(
            DeviceKind.parse(body["kind"]),
            wire.as_str(body.get("device_id"), "device_id", optional=True),
            region_tag=wire.as_str(body.get("region_tag"), "region_tag", optional=True),
        )
        return WireResponse({"device_id": device_id, "token": token.value})

    @app.post("/v1/devices/{device_id}/location")
    async def update_location(device_id: str, request: Request) -> WireResponse:
        caller = authenticate(request)
        if caller != device_id:
            raise InvalidToken("token does not belong to this device")
        body = wire.require_fields(await _json_body(request), ("lat", "lon", "at"), ("alt",), "location")
        pos = GeoPoint(body["lat"], body["lon"], body.get("alt"))
        at = wire.as_int(body["at"], "at")
        service.tracker.update_location(device_id, pos, at)
        return WireResponse({"device_id": device_id, "at": at})

    @app.post("/v1/frames")
    async def ingest_frame(request: Request) -> WireResponse:
        token = bearer_token(request)
        service.auth.verify(token)
        frame = wire.frame_from_wire(await _json_body(request))
        return WireResponse(wire.annotated_to_wire(service.ingest.ingest_frame(token, frame)))

    @app.get("/v1/map")
    def query_map(
        request: Request,
        at: int = Query(..., ge=0),
        min_lat: float | None = None,
        min_lon: float | None = None,
        max_lat: float | None = None,
        max_lon: float | None = None,
        layers: str | None = None,
    ) -> WireResponse:
        authenticate(request)
        bounds = (min_lat, min_lon, max_lat, max_lon)
        region = None
        if any(b is not None for b in bounds):
            if any(b is None for b in bounds):
                raise ValidationError("region needs all of min_lat, min_lon, max_lat, max_lon")
            region = BoundingBox(*bounds)
        layer_set = None
        if layers:
            layer_set = [LayerKind.parse(name.strip()) for name in layers.split(",") if name.strip()]
        return WireResponse(wire.snapshot_to_wire(service.store.query_at(at, region, layer_set)))

    @app.get("/v1/devices")
    def list_devices(request: Request, now: int | None = Query(None, ge=0)) -> WireResponse:
        authenticate(request)
        now = service.clock() if now is None else now
        return WireResponse([wire.device_to_wire(d) for d in service.tracker.list_devices(now)])

    @app.post("/v1/zones")
    async def create_zone(request: Request) -> WireResponse:
        authenticate(request)
        zone = wire.zone_from_wire(await _json_body(request))
        return WireResponse({"zone_id": service.events.create_zone(zone)})

    @app.get("/v1/zones")
    def list_zones(request: Request) -> WireResponse:
        authenticate(request)
        return WireResponse([wire.zone_to_wire(z) for z in service.events.zones()])

    @app.get("/v1/events")
    def poll_events(
        request: Request,
        after: int = Query(0, ge=0),
        timeout_ms: int | None = Query(None, ge=0),
    ) -> WireResponse:
        device_id = authenticate(request)
        limit = service.config.long_poll_s
        wait = limit if timeout_ms is None else min(limit, timeout_ms / 1000.0)
        events = service.events.poll_events(device_id, after, timeout_s=wait)
        return WireResponse([wire.event_to_wire(e) for e in events])

    @app.get("/v1/objects/{object_id}/history")
    def object_history(
        object_id: str,
        request: Request,
        start: int = Query(0, ge=0, alias="from"),
        end: int | None = Query(None, ge=0, alias="to"),
    ) -> WireResponse:
        authenticate(request)
        return WireResponse([wire.object_to_wire(o) for o in service.store.object_history(object_id, start, end)])

    return app


def bind_socket(host: str, port: int) -> socket.socket:
    try:
        family = socket.AF_INET6 if ":" in host else socket.AF_INET
        # an explicit proto lets asyncio set TCP_NODELAY on accepted connections
        sock = socket.socket(family, socket.SOCK_STREAM, socket.IPPROTO_TCP)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((host, port))
    except (OSError, OverflowError, TypeError) as exc:
        raise BindFailure(f"cannot bind {host}:{port}: {exc}") from exc
    sock.set_inheritable(True)
    return sock


class _Server(uvicorn.Server):
    @contextlib.contextmanager
    def capture_signals(self) -> Iterator[None]:
        with super().capture_signals():
            yield
            # shutdown already ran; return normally so the caller can flush the journal
            self._captured_signals.clear()

    async def startup(self, sockets: list[socket.socket] | None = None) -> None:
        await super().startup(sockets=sockets)
        if self.started and sockets:
            # signal handlers are already installed, so a SIGTERM from here on is graceful
            host, port = sockets[0].getsockname()[:2]
            log.info("ldm ready on http://%s:%d", host, port)


def serve(config: ServiceConfig, service: LocalDynamicMap | None = None) -> None:
    """Run the service in the foreground until SIGINT/SIGTERM, then flush the journal."""
    sock = bind_socket(config.host, config.port)
    service = service or LocalDynamicMap(config)
    server = _Server(uvicorn.Config(create_app(service), log_level="warning", access_log=False))
    try:
        server.run(sockets=[sock])
    finally:
        service.close()
        sock.close()


class BackgroundServer:
    """A live service on a background thread, for tests and in-process tools."""

    def __init__(self, service: LocalDynamicMap, host: str = "127.0.0.1", port: int = 0) -> None:
        self.service = service
        self._sock = bind_socket(host, port)
        self.host, self.port = self._sock.getsockname()[:2]
        self._server = uvicorn.Server(uvicorn.Config(create_app(service), log_level="warning", access_log=False))
        self._server.install_signal_handlers = lambda: None  # type: ignore[method-assign]
        self._thread = threading.Thread(target=self._server.run, kwargs={"sockets": [self._sock]}, daemon=True)

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> "BackgroundServer":
        self._thread.start()
        while not self._server.started:
            if not self._thread.is_alive():
                raise BindFailure("server thread exited during startup")
            threading.Event().wait(0.01)
        return self

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10)
        self._sock.close()
        self.service.close()

    def __enter__(self) -> "BackgroundServer":
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()
