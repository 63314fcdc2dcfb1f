"""Transcript replay: re-run a stored session and verify byte equality.

Recorded completions become the response tape, recorded user messages become
the input tape; everything else must be reproduced by the engine itself.
"""

from __future__ import annotations

import dataclasses
import tempfile
from pathlib import Path

from .config import EngineConfig
from .errors import NotFound
from .gateway import ReplayResponder
from .jsonutil import canonical_dumps
from .pipeline import Engine, SessionClock, SessionRuntime
from .session import EXCHANGE_KINDS, SessionState, Status, start_session
from .store import SessionStore


@dataclasses.dataclass(frozen=True)
class ReplayVerdict:
    ok: bool
    message: str  # "MATCH" or "MISMATCH at ordinal n"
    detail: str = ""


def _resolve_session_dir(path: Path) -> Path:
    if path.is_file() and path.name == "transcript.jsonl":
        return path.parent
    if path.is_dir() and (path / "state.json").exists():
        return path
    raise NotFound(f"no session record at {path}")


def verify_replay(config: EngineConfig, path: str | Path) -> ReplayVerdict:
    session_dir = _resolve_session_dir(Path(path))
    stored = SessionStore(session_dir.parent).load(session_dir.name)

    responses = [e.payload["response"] for e in stored.transcript
                 if e.kind in EXCHANGE_KINDS]

    with tempfile.TemporaryDirectory(prefix="unipilot-replay-") as scratch:
        replay_config = dataclasses.replace(config, store_dir=scratch)
        engine = Engine(replay_config)
        fresh = start_session(stored.session_id, stored.query,
                              at_ms=0, inputs=dict(stored.inputs))
        fresh.inputs.pop("refusal_reason", None)
        clock = SessionClock(fresh, replay_config.use_logical_clock)
        at = clock.now_ms()
        fresh.created_at = at
        fresh.transcript[0] = dataclasses.replace(fresh.transcript[0], at_ms=at)
        fresh.last_committed_ordinal = len(fresh.transcript)
        engine.store.persist(fresh)
        runtime = SessionRuntime(engine, fresh,
                                 provider=ReplayResponder(responses))
        runtime.use_tape(stored.transcript)
        try:
            _drive(runtime, target_len=len(stored.transcript))
        except Exception:
            # a diverging replay can crash the engine; the comparison below
            # still pinpoints the first diverging ordinal
            pass
        return _compare(stored, runtime.session)


def _drive(runtime: SessionRuntime, target_len: int) -> None:
    session = runtime.session
    guard = 0
    while len(session.transcript) < target_len and guard < 1000:
        guard += 1
        if session.status is Status.Running:
            runtime.run_stage()
        elif session.status is Status.AwaitingUser:
            directive = runtime._tape_directive()
            if directive is None and session.pending_interventions:
                break  # stored run ended waiting for clarification
            runtime.resume(directive)
        else:
            break


def _compare(stored: SessionState, produced: SessionState) -> ReplayVerdict:
    for i, expected in enumerate(stored.transcript):
        if i >= len(produced.transcript):
            return ReplayVerdict(False, f"MISMATCH at ordinal {expected.ordinal}",
                                 detail="replay produced fewer entries")
        got = produced.transcript[i]
        a, b = canonical_dumps(expected.to_json()), canonical_dumps(got.to_json())
        if a != b:
            return ReplayVerdict(False, f"MISMATCH at ordinal {expected.ordinal}",
                                 detail=f"expected {a[:200]}... got {b[:200]}...")
    if len(produced.transcript) > len(stored.transcript):
        n = produced.transcript[len(stored.transcript)].ordinal
        return ReplayVerdict(False, f"MISMATCH at ordinal {n}",
                             detail="replay produced extra entries")
    if stored.status is not produced.status:
        return ReplayVerdict(False, "MISMATCH at ordinal -1",
                             detail=f"status {stored.status} != {produced.status}")
    for stage, checkpoint in stored.checkpoints.items():
        other = produced.checkpoints.get(stage)
        if other is None or canonical_dumps(other.artifacts) != canonical_dumps(
                checkpoint.artifacts):
            return ReplayVerdict(False, "MISMATCH at ordinal -1",
                                 detail=f"checkpoint {stage.name} artifacts differ")
    return ReplayVerdict(True, "MATCH")
