"""HTTP facade for a training run: status, the pending query batch, and
label submission. This is the transport behind the human oracle and the
backend of the labeling console.

One trainer thread and the request handlers share a LabelExchange: an
atomically swapped status snapshot, a single pending batch guarded by a
lock, and a completion event that wakes the suspended trainer once every
item of the batch is labeled.
"""

from __future__ import annotations

import os
import threading
from pathlib import Path
from typing import Literal

from fastapi import FastAPI
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .active import QueryBatch, QueryError

DEFAULT_ADDR = "127.0.0.1:8723"
ADDR_ENV_VAR = "RLAD_ADDR"


class ConflictError(ValueError):
    """Submission does not match the pending batch."""


class LabelExchange:
    """Thread-safe state shared between the trainer and the HTTP handlers."""

    def __init__(self):
        self._lock = threading.Lock()
        self._complete = threading.Event()
        self._status: dict = {"state": "idle", "episode": 0, "epsilon": None,
                              "human_labels_used": 0, "pseudo_labels_assigned": 0,
                              "metrics": None}
        self._pending: QueryBatch | None = None
        self._received: dict[int, int] = {}
        self._done_indices: set[int] = set()

    # -- trainer side -----------------------------------------------------

    def set_status(self, status: dict) -> None:
        with self._lock:
            self._status = dict(status)

    def publish_batch(self, batch: QueryBatch) -> None:
        with self._lock:
            if self._pending is not None and self._pending.batch_id == batch.batch_id:
                return  # re-publication after a timeout keeps accumulated labels
            self._pending = batch
            self._received = {}
            self._complete.clear()

    def wait_for_labels(self, timeout: float | None = None) -> dict[int, int]:
        if not self._complete.wait(timeout):
            raise QueryError("timed out waiting for labels; batch stays pending")
        with self._lock:
            got = dict(self._received)
            self._done_indices.update(got)
            self._pending = None
            self._received = {}
            self._complete.clear()
        return got

    # -- HTTP side ---------------------------------------------------------

    def snapshot(self) -> dict:
        with self._lock:
            snap = dict(self._status)
            if self._pending is not None:
                snap["state"] = "awaiting_labels"
                snap["pending_items"] = len(self._pending.items)
                snap["pending_labeled"] = len(self._received)
            return snap

    def pending_payload(self) -> dict | None:
        with self._lock:
            if self._pending is None:
                return None
            return {
                "batch_id": self._pending.batch_id,
                "items": [
                    {
                        "index": it.index,
                        "margin": it.margin,
                        "window": [float(v) for v in it.window],
                        "context": [float(v) for v in it.context],
                        "context_start": it.context_start,
                        "end_index": it.end_index,
                        "episode": it.episode,
                    }
                    for it in self._pending.items
                ],
            }

    def submit(self, batch_id: str, labels: list[tuple[int, int]]) -> dict:
        """Accumulate a (possibly partial) submission; atomic validation."""
        with self._lock:
            if self._pending is None or batch_id != self._pending.batch_id:
                raise ConflictError(f"no pending batch with id {batch_id!r}")
            valid = set(self._pending.indices())
            seen = set()
            for index, label in labels:
                if index not in valid:
                    raise ConflictError(f"index {index} is not part of the pending batch")
                if index in self._received or index in seen or index in self._done_indices:
                    raise ConflictError(f"index {index} already has a label")
                if label not in (0, 1):
                    raise ValueError(f"label must be 0 or 1, got {label}")
                seen.add(index)
            for index, label in labels:
                self._received[index] = label
            complete = len(self._received) == len(valid)
            if complete:
                self._complete.set()
            return {"accepted": len(labels), "complete": complete}


class _LabelItem(BaseModel):
    index: int
    label: Literal[0, 1]


class LabelSubmission(BaseModel):
    batch_id: str
    labels: list[_LabelItem]


def create_app(exchange: LabelExchange, static_dir=None) -> FastAPI:
    """The HTTP app: /api/status, /api/queries, /api/labels (+ static UI)."""
    app = FastAPI(title="rlad labeling service")

    @app.get("/api/status")
    def status():
        return JSONResponse(exchange.snapshot())

    @app.get("/api/queries")
    def queries():
        payload = exchange.pending_payload()
        if payload is None:
            return Response(status_code=204)
        return JSONResponse(payload)

    @app.post("/api/labels")
    def labels(submission: LabelSubmission):
        try:
            ack = exchange.submit(
                submission.batch_id,
                [(item.index, item.label) for item in submission.labels],
            )
        except ConflictError as exc:
            return JSONResponse({"error": str(exc)}, status_code=409)
        except ValueError as exc:
            return JSONResponse({"error": str(exc)}, status_code=422)
        return JSONResponse(ack)

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="console")
    return app


def resolve_addr(flag_value: str | None = None) -> tuple[str, int]:
    """Bind address — CLI flag wins, then RLAD_ADDR, then the default."""
    addr = flag_value or os.environ.get(ADDR_ENV_VAR) or DEFAULT_ADDR
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bad address {addr!r}; expected host:port")
    return host, int(port)


def run_server(app: FastAPI, host: str, port: int, in_thread: bool = False):
    """Serve the app; in_thread returns a (server, thread) pair for shutdown."""
    import uvicorn

    config = uvicorn.Config(app, host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)
    if not in_thread:
        server.run()
        return None
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    return server, thread
