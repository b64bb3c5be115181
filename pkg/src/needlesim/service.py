"""Local HTTP/JSON service over sessions.

A thin adapter: every route parses arguments, takes or swaps an immutable
session snapshot, and delegates to the library. Mutations serialize through
a per-session lock; renders and slices read whatever snapshot is current,
so they never block a writer. Images ship as PNG, everything else as JSON
in the shapes documented in docs/SCHEMA.md.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from . import scene as _scene
from .errors import (
    Conflict,
    InvalidArgument,
    NeedleSimError,
    ParseError,
    UnknownId,
    UnknownLayer,
    UnknownPreset,
    UnsupportedFormat,
    UnsupportedVersion,
)

_STATUS_OF_CODE = {
    "bad_request": 400,
    "not_found": 404,
    "conflict": 409,
    "unsupported": 415,
    "internal": 500,
}


class ApiException(Exception):
    """Carries the wire-format error triple (code, message, detail)."""

    def __init__(self, code: str, message: str, detail=None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.detail = detail

    @property
    def status(self) -> int:
        return _STATUS_OF_CODE[self.code]

    def to_response(self) -> JSONResponse:
        body = {"code": self.code, "message": self.message}
        if self.detail is not None:
            body["detail"] = self.detail
        return JSONResponse(status_code=self.status, content=body)


def _classify(error: Exception) -> ApiException:
    if isinstance(error, ApiException):
        return error
    if isinstance(error, Conflict):
        return ApiException("conflict", str(error))
    if isinstance(error, (UnknownId, UnknownLayer, UnknownPreset, FileNotFoundError)):
        return ApiException("not_found", str(error))
    if isinstance(error, (UnsupportedFormat, UnsupportedVersion)):
        return ApiException("unsupported", str(error))
    if isinstance(error, (InvalidArgument, ParseError, NeedleSimError, ValueError, KeyError)):
        return ApiException("bad_request", str(error))
    return ApiException("internal", f"{type(error).__name__}: {error}")


@dataclass
class _SessionSlot:
    session: object
    lock: threading.Lock = field(default_factory=threading.Lock)


class ServiceState:
    def __init__(self, data_root):
        self.data_root = os.path.abspath(os.fspath(data_root))
        if not os.path.isdir(self.data_root):
            raise InvalidArgument(f"data root {self.data_root!r} is not a directory")
        self.slots = {}
        self._counter = 0
        self._create_lock = threading.Lock()

    def catalog(self) -> dict:
        volumes = []
        models = []
        for dirpath, dirnames, filenames in os.walk(self.data_root):
            dirnames.sort()
            for name in sorted(filenames):
                rel = os.path.relpath(os.path.join(dirpath, name), self.data_root)
                if name.endswith((".nrrd", ".nhdr")):
                    entry = {"name": rel}
                    sidecar = os.path.splitext(rel)[0] + ".landmarks.json"
                    if os.path.exists(os.path.join(self.data_root, sidecar)):
                        entry["landmarks"] = sidecar
                    volumes.append(entry)
                elif name == "model.json":
                    models.append({"name": rel})
        return {"volumes": volumes, "models": models}

    def resolve(self, rel_path: str) -> str:
        full = os.path.abspath(os.path.join(self.data_root, rel_path))
        if os.path.commonpath([full, self.data_root]) != self.data_root:
            raise ApiException("bad_request", f"path {rel_path!r} escapes the data root")
        if not os.path.exists(full):
            raise ApiException("not_found", f"no such file in data root: {rel_path!r}")
        return full

    def create_session(self, volume_rel: str, model_rel: str | None):
        volume_path = self.resolve(volume_rel)
        model_path = self.resolve(model_rel) if model_rel else None
        with self._create_lock:
            self._counter += 1
            session_id = f"s{self._counter}"
        session = _scene.new_session(
            session_id, volume_path, model_path, data_root=self.data_root
        )
        self.slots[session_id] = _SessionSlot(session=session)
        return session

    def slot(self, session_id: str) -> _SessionSlot:
        slot = self.slots.get(session_id)
        if slot is None:
            raise ApiException("not_found", f"no session {session_id!r}")
        return slot


def _int_arg(value, name, lo=None, hi=None):
    try:
        out = int(value)
    except (TypeError, ValueError):
        raise ApiException("bad_request", f"{name} must be an integer, got {value!r}")
    if lo is not None and out < lo:
        raise ApiException("bad_request", f"{name} must be >= {lo}, got {out}")
    if hi is not None and out > hi:
        raise ApiException("bad_request", f"{name} must be <= {hi}, got {out}")
    return out


def create_app(data_root) -> FastAPI:
    state = ServiceState(data_root)
    app = FastAPI(title="needlesim", docs_url=None, redoc_url=None)
    app.state.engine = state

    @app.exception_handler(Exception)
    async def _on_error(request: Request, exc: Exception):
        return _classify(exc).to_response()

    @app.exception_handler(ApiException)
    async def _on_api_error(request: Request, exc: ApiException):
        return exc.to_response()

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/volumes")
    def volumes():
        return state.catalog()

    @app.post("/sessions")
    async def create_session(request: Request):
        body = await request.json()
        if not isinstance(body, dict) or "volume" not in body:
            raise ApiException("bad_request", "body must be {volume, model?}")
        try:
            session = state.create_session(body["volume"], body.get("model"))
        except NeedleSimError as e:
            raise _classify(e)
        return {"id": session.id, "revision": session.revision}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return state.slot(session_id).session.to_dict()

    @app.post("/sessions/{session_id}/commands")
    async def post_command(session_id: str, request: Request):
        slot = state.slot(session_id)
        command = await request.json()
        expected = request.headers.get("x-expected-revision")
        expected_revision = None if expected is None else _int_arg(expected, "X-Expected-Revision")
        with slot.lock:
            try:
                slot.session = _scene.mutate(
                    slot.session, command, expected_revision=expected_revision
                )
            except NeedleSimError as e:
                raise _classify(e)
            session = slot.session
        return {"revision": session.revision, "session": session.to_dict()}

    @app.get("/sessions/{session_id}/frame")
    def frame(session_id: str, w: str | None = None, h: str | None = None):
        session = state.slot(session_id).session
        width = None if w is None else _int_arg(w, "w", lo=1)
        height = None if h is None else _int_arg(h, "h", lo=1)
        try:
            image = _scene.render_frame(session, width, height)
        except NeedleSimError as e:
            raise _classify(e)
        return Response(
            content=image.to_png_bytes(),
            media_type="image/png",
            headers={"X-Revision": str(session.revision)},
        )

    @app.get("/sessions/{session_id}/planes/{plane_id}/slice")
    def plane_slice(session_id: str, plane_id: str, w: str | None = None,
                    h: str | None = None, needles: str | None = None,
                    colorize: str | None = None):
        session = state.slot(session_id).session
        width = None if w is None else _int_arg(w, "w", lo=1)
        height = None if h is None else _int_arg(h, "h", lo=1)
        try:
            image = _scene.slice_image(
                session, plane_id, width, height,
                needles=needles == "1", colorize=colorize == "1",
            )
        except NeedleSimError as e:
            raise _classify(e)
        return Response(
            content=image.to_png_bytes(),
            media_type="image/png",
            headers={"X-Revision": str(session.revision)},
        )

    @app.get("/sessions/{session_id}/histogram")
    def session_histogram(session_id: str, bins: str = "64"):
        session = state.slot(session_id).session
        nbins = _int_arg(bins, "bins", lo=2)
        try:
            hist = _scene.volume_histogram(session, nbins)
        except NeedleSimError as e:
            raise _classify(e)
        return {
            "bin_count": hist.bin_count,
            "range": list(hist.range),
            "counts": hist.counts.tolist(),
        }

    @app.get("/sessions/{session_id}/score")
    def session_score(session_id: str, needle: str, acupoint: str):
        session = state.slot(session_id).session
        try:
            report, crossings = _scene.score_needle(session, needle, acupoint)
        except NeedleSimError as e:
            raise _classify(e)
        body = report.to_dict()
        body["crossings"] = [c.to_dict() for c in crossings]
        return body

    @app.post("/sessions/{session_id}/pick")
    async def pick(session_id: str, request: Request):
        session = state.slot(session_id).session
        body = await request.json()
        try:
            x = float(body["x"])
            y = float(body["y"])
            width = _int_arg(body.get("w", 512), "w", lo=1)
            height = _int_arg(body.get("h", 512), "h", lo=1)
        except (KeyError, TypeError, ValueError):
            raise ApiException("bad_request", "body must be {x, y, w, h}")
        try:
            return _scene.pick_surface(session, x, y, width, height)
        except NeedleSimError as e:
            raise _classify(e)

    return app


def serve(bind: str = "127.0.0.1:8630", data_root=".") -> None:
    """Run the service until interrupted; bind is 'host:port'."""
    import uvicorn

    host, _, port_text = bind.rpartition(":")
    if not host or not port_text.isdigit():
        raise InvalidArgument(f"bind must be host:port, got {bind!r}")
    app = create_app(data_root)
    uvicorn.run(app, host=host, port=int(port_text), log_level="warning")
