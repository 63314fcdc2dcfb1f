"""On-disk session store: state.json, append-only transcript, checkpoint records."""

from __future__ import annotations

import json
import os
from pathlib import Path

from .errors import CorruptRecord, NotFound
from .jsonutil import canonical_bytes, canonical_dumps, sha256_hex
from .session import (
    Checkpoint,
    InterventionEvent,
    SessionState,
    Stage,
    Status,
    TranscriptEntry,
)

CHECKPOINT_FORMAT = "unipilot-checkpoint"
CHECKPOINT_VERSION = 1


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    """Self-describing record with a checksum over the canonical artifacts."""
    artifacts_bytes = canonical_bytes(checkpoint.artifacts)
    record = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "stage": checkpoint.stage.name,
        "created_at": checkpoint.created_at,
        "directives": list(checkpoint.directives),
        "artifacts_sha256": sha256_hex(artifacts_bytes),
        "artifacts": checkpoint.artifacts,
    }
    return canonical_bytes(record)


def decode_checkpoint(data: bytes) -> Checkpoint:
    try:
        record = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CorruptRecord(f"checkpoint record unreadable: {exc}") from exc
    if record.get("format") != CHECKPOINT_FORMAT or record.get("version") != CHECKPOINT_VERSION:
        raise CorruptRecord("checkpoint record has wrong format header")
    digest = sha256_hex(canonical_bytes(record.get("artifacts")))
    if digest != record.get("artifacts_sha256"):
        raise CorruptRecord("checkpoint checksum mismatch")
    return Checkpoint(
        stage=Stage[record["stage"]],
        artifacts=record["artifacts"],
        created_at=record["created_at"],
        directives=list(record["directives"]),
    )


class SessionStore:
    """One directory per session: state.json, transcript.jsonl, checkpoints/."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def session_dir(self, session_id: str) -> Path:
        return self.root / session_id

    def list_sessions(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir()
                      if p.is_dir() and (p / "state.json").exists())

    def next_session_id(self) -> str:
        existing = self.list_sessions()
        highest = 0
        for sid in existing:
            if sid.startswith("s-"):
                try:
                    highest = max(highest, int(sid[2:]))
                except ValueError:
                    continue
        return f"s-{highest + 1:04d}"

    def delete(self, session_id: str) -> None:
        import shutil

        target = self.session_dir(session_id)
        if not target.exists():
            raise NotFound(f"no session {session_id!r}")
        shutil.rmtree(target)

    # -- incremental writes used by the live runtime --

    def append_entry(self, session_id: str, entry: TranscriptEntry) -> None:
        path = self.session_dir(session_id) / "transcript.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a", encoding="utf-8") as fh:
            fh.write(canonical_dumps(entry.to_json()) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def write_state(self, session: SessionState) -> None:
        directory = self.session_dir(session.session_id)
        directory.mkdir(parents=True, exist_ok=True)
        state = session.to_json()
        state.pop("transcript")  # transcript lives in its own append-only file
        state.pop("checkpoints")
        state["checkpoint_stages"] = sorted(
            (s.name for s in session.checkpoints), key=lambda n: Stage[n].ordinal)
        tmp = directory / "state.json.tmp"
        tmp.write_text(canonical_dumps(state), encoding="utf-8")
        tmp.replace(directory / "state.json")

    def write_checkpoint(self, session_id: str, checkpoint: Checkpoint) -> None:
        directory = self.session_dir(session_id) / "checkpoints"
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{checkpoint.stage.name}.bin").write_bytes(
            encode_checkpoint(checkpoint))

    def remove_checkpoint(self, session_id: str, stage: Stage) -> None:
        path = self.session_dir(session_id) / "checkpoints" / f"{stage.name}.bin"
        if path.exists():
            path.unlink()

    # -- whole-session persist/load --

    def persist(self, session: SessionState) -> str:
        """Write everything from scratch; returns the session directory."""
        directory = self.session_dir(session.session_id)
        directory.mkdir(parents=True, exist_ok=True)
        transcript = directory / "transcript.jsonl"
        with transcript.open("w", encoding="utf-8") as fh:
            for entry in session.transcript:
                fh.write(canonical_dumps(entry.to_json()) + "\n")
        checkpoints = directory / "checkpoints"
        checkpoints.mkdir(exist_ok=True)
        for existing in checkpoints.glob("*.bin"):
            existing.unlink()
        for checkpoint in session.checkpoints.values():
            self.write_checkpoint(session.session_id, checkpoint)
        self.write_state(session)
        return str(directory)

    def load(self, session_id: str) -> SessionState:
        directory = self.session_dir(session_id)
        state_path = directory / "state.json"
        if not state_path.exists():
            raise NotFound(f"no session {session_id!r}")
        try:
            state = json.loads(state_path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise CorruptRecord(f"state.json unreadable: {exc}") from exc

        session = SessionState(
            session_id=state["session_id"],
            query=state["query"],
            current_stage=Stage[state["current_stage"]],
            status=Status(state["status"]),
            inputs=state.get("inputs", {}),
            last_committed_ordinal=state.get("last_committed_ordinal", 0),
            created_at=state.get("created_at", 0),
        )
        session.clock_ms = state.get("clock_ms", 0)
        for name, directives in state.get("stage_directives", {}).items():
            session.stage_directives[Stage[name]] = list(directives)
        for event in state.get("pending_interventions", []):
            session.pending_interventions.append(InterventionEvent.from_json(event))

        transcript_path = directory / "transcript.jsonl"
        if transcript_path.exists():
            for line_no, line in enumerate(
                    transcript_path.read_text(encoding="utf-8").splitlines()):
                if not line.strip():
                    continue
                try:
                    entry = TranscriptEntry.from_json(json.loads(line))
                except (ValueError, KeyError) as exc:
                    # a torn tail beyond the committed boundary is the normal
                    # residue of a crash mid-append; anything committed must parse
                    if line_no + 1 > session.last_committed_ordinal:
                        break
                    raise CorruptRecord(
                        f"transcript line {line_no + 1} unreadable: {exc}") from exc
                session.transcript.append(entry)
        # drop entries past the last committed stage boundary (torn writes from
        # a crash mid-stage); the stage re-runs deterministically
        cut = session.last_committed_ordinal
        if len(session.transcript) > cut:
            session.transcript = session.transcript[:cut]

        for name in state.get("checkpoint_stages", []):
            path = directory / "checkpoints" / f"{name}.bin"
            if not path.exists():
                raise CorruptRecord(f"checkpoint {name} listed but missing")
            checkpoint = decode_checkpoint(path.read_bytes())
            session.checkpoints[checkpoint.stage] = checkpoint
        return session
