"""HTTP + event-stream service over sessions, with persistence-backed recovery.

One worker thread drives each live session; HTTP handlers only enqueue user
messages, resume awaiting sessions, or flip abort signals. Event frames are
transcript entries, resumable by ordinal.
"""

from __future__ import annotations

import queue
import threading
from typing import Iterator

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from .config import EngineConfig
from .errors import EmptyQuery, NotFound, PathNotFound, UniPilotError
from .jsonutil import canonical_dumps
from .pipeline import Engine, SessionRuntime
from .session import Status, TERMINAL_STATUSES, TranscriptEntry

STREAM_POLL_S = 0.05
STREAM_IDLE_LIMIT = 400  # polls with no frame before giving up (~20 s)


class SessionWorker(threading.Thread):
    def __init__(self, runtime: SessionRuntime):
        super().__init__(daemon=True)
        self.runtime = runtime
        self.wake = threading.Event()
        self.stopping = False

    def run(self) -> None:
        while not self.stopping:
            status = self.runtime.session.status
            if status is Status.Running:
                self.runtime.run_stage()
            elif status is Status.AwaitingUser:
                self.wake.wait(timeout=STREAM_POLL_S)
                self.wake.clear()
            else:
                break


class Service:
    """Engine plus live runtimes; recovers unfinished sessions from the store."""

    def __init__(self, config: EngineConfig):
        self.engine = Engine(config)
        self.runtimes: dict[str, SessionRuntime] = {}
        self.workers: dict[str, SessionWorker] = {}
        self._lock = threading.Lock()
        self._recover()

    def _recover(self) -> None:
        for session_id in self.engine.store.list_sessions():
            session = self.engine.store.load(session_id)
            runtime = SessionRuntime(self.engine, session)
            self.runtimes[session_id] = runtime
            if session.status in (Status.Running, Status.AwaitingUser):
                self._start_worker(runtime)

    def _start_worker(self, runtime: SessionRuntime) -> None:
        worker = SessionWorker(runtime)
        self.workers[runtime.session.session_id] = worker
        worker.start()

    def shutdown(self) -> None:
        """Cooperative stop at the next frame boundary; state is persisted."""
        for worker in self.workers.values():
            worker.stopping = True
            worker.wake.set()
        for worker in self.workers.values():
            worker.join(timeout=10)

    def create_session(self, query: str, dataset_path: str | None = None) -> SessionRuntime:
        runtime = self.engine.new_session(query, dataset_path=dataset_path)
        with self._lock:
            self.runtimes[runtime.session.session_id] = runtime
        runtime.run_stage()  # the intake filter gates everything else
        if runtime.session.status is not Status.Refused:
            self._start_worker(runtime)
        return runtime

    def get(self, session_id: str) -> SessionRuntime:
        runtime = self.runtimes.get(session_id)
        if runtime is None:
            raise NotFound(f"no session {session_id!r}")
        return runtime

    def summary(self, runtime: SessionRuntime) -> dict:
        session = runtime.session
        return {
            "session_id": session.session_id,
            "status": session.status.value,
            "current_stage": session.current_stage.name,
            "created_at": session.created_at,
            "last_event_ordinal": len(session.transcript),
        }


class CreateSessionBody(BaseModel):
    query: str = ""
    dataset_path: str | None = None


class MessageBody(BaseModel):
    text: str


def create_app(config: EngineConfig, service: Service | None = None) -> FastAPI:
    app = FastAPI(title="unipilot", version="0.1.0")
    app.state.service = service or Service(config)
    svc: Service = app.state.service

    if config.console_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/console", StaticFiles(directory=config.console_dir, html=True),
                  name="console")

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        if not body.query.strip():
            raise HTTPException(400, detail="EmptyQuery")
        try:
            runtime = svc.create_session(body.query, body.dataset_path)
        except EmptyQuery:
            raise HTTPException(400, detail="EmptyQuery")
        except PathNotFound as exc:
            raise HTTPException(400, detail=str(exc))
        if runtime.session.status is Status.Refused:
            return JSONResponse(status_code=422, content={
                "detail": "GuardRefusal",
                "reason": runtime.session.inputs.get("refusal_reason", ""),
                "session_id": runtime.session.session_id,
            })
        return svc.summary(runtime)

    @app.get("/sessions")
    def list_sessions():
        return [svc.summary(rt) for _, rt in sorted(svc.runtimes.items())]

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        try:
            return svc.summary(svc.get(session_id))
        except NotFound:
            raise HTTPException(404, detail="unknown session")

    @app.delete("/sessions/{session_id}", status_code=204)
    def delete_session(session_id: str):
        try:
            runtime = svc.get(session_id)
        except NotFound:
            raise HTTPException(404, detail="unknown session")
        worker = svc.workers.pop(session_id, None)
        if worker:
            worker.stopping = True
            worker.wake.set()
            worker.join(timeout=5)
        svc.runtimes.pop(session_id, None)
        svc.engine.store.delete(session_id)
        return None

    @app.get("/sessions/{session_id}/transcript")
    def get_transcript(session_id: str):
        try:
            runtime = svc.get(session_id)
        except NotFound:
            raise HTTPException(404, detail="unknown session")
        return {"session_id": session_id,
                "entries": [e.to_json() for e in runtime.session.transcript]}

    @app.post("/sessions/{session_id}/messages", status_code=202)
    def post_message(session_id: str, body: MessageBody):
        try:
            runtime = svc.get(session_id)
        except NotFound:
            raise HTTPException(404, detail="unknown session")
        session = runtime.session
        if session.status in TERMINAL_STATUSES or session.status is Status.Failed:
            raise HTTPException(409, detail=f"session is {session.status.value}")
        if session.status is Status.AwaitingUser:
            runtime.resume(body.text)
            worker = svc.workers.get(session_id)
            if worker:
                worker.wake.set()
            return {"routed": "directive"}
        runtime.queue_intervention(body.text)
        return {"routed": "intervention"}

    @app.post("/sessions/{session_id}/trials/{trial_id}/abort", status_code=202)
    def abort_trial(session_id: str, trial_id: int):
        try:
            runtime = svc.get(session_id)
        except NotFound:
            raise HTTPException(404, detail="unknown session")
        state = runtime.trial_states.get(trial_id)
        if state is None:
            raise HTTPException(404, detail="unknown trial")
        if state != "running":
            raise HTTPException(409, detail=f"trial is {state}")
        runtime.abort_trial(trial_id)
        return {"trial_id": trial_id, "signal": "abort"}

    @app.get("/sessions/{session_id}/events")
    def stream_events(session_id: str, since: int = 0):
        try:
            runtime = svc.get(session_id)
        except NotFound:
            raise HTTPException(404, detail="unknown session")
        return StreamingResponse(_frames(runtime, since),
                                 media_type="text/event-stream")

    return app


def _frames(runtime: SessionRuntime, since: int) -> Iterator[str]:
    """Replay frames after `since`, then follow live ones until terminal."""
    live: queue.Queue = queue.Queue()
    runtime.listeners.append(live.put)
    try:
        with runtime.lock:
            snapshot = list(runtime.session.transcript)
        last = since
        for entry in snapshot:
            if entry.ordinal > last:
                yield _sse(entry)
                last = entry.ordinal
        idle = 0
        while True:
            done = runtime.session.status not in (Status.Running, Status.AwaitingUser)
            try:
                entry = live.get(timeout=STREAM_POLL_S)
                idle = 0
            except queue.Empty:
                if done and len(runtime.session.transcript) <= last:
                    break
                idle += 1
                if idle >= STREAM_IDLE_LIMIT:
                    break
                continue
            if entry.ordinal > last:
                yield _sse(entry)
                last = entry.ordinal
        yield f"event: end\ndata: {{\"status\":\"{runtime.session.status.value}\"}}\n\n"
    finally:
        try:
            runtime.listeners.remove(live.put)
        except ValueError:
            pass


def _sse(entry: TranscriptEntry) -> str:
    return f"id: {entry.ordinal}\ndata: {canonical_dumps(entry.to_json())}\n\n"
