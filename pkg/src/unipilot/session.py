"""Session state machine: stages, checkpoints, transcript, interventions.

Checkpoints are cumulative artifact maps. While a session is running, a
checkpoint exists exactly for every stage before the current one; a retrace
discards everything after its target and consumes the target's checkpoint so
the target stage can re-run with the new directive.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

from .errors import EmptyQuery

STAGE_NAMES = ("Intake", "TaskAnalysis", "ModelSelection", "Preprocessing",
               "Configuration", "Training", "Report")


class Stage(enum.Enum):
    Intake = 0
    TaskAnalysis = 1
    ModelSelection = 2
    Preprocessing = 3
    Configuration = 4
    Training = 5
    Report = 6

    @property
    def ordinal(self) -> int:
        return self.value

    @property
    def next(self) -> "Stage | None":
        return Stage(self.value + 1) if self.value < Stage.Report.value else None


class Status(enum.Enum):
    Idle = "Idle"
    Running = "Running"
    AwaitingUser = "AwaitingUser"
    Failed = "Failed"
    Completed = "Completed"
    Refused = "Refused"


TERMINAL_STATUSES = (Status.Completed, Status.Refused)

# transcript entry kinds
K_USER = "UserMessage"
K_EXPLANATION = "SystemExplanation"
K_STAGE_RESULT = "StageResult"
K_GUARDLINE = "GuardlineAction"
K_ERROR = "Error"
K_PROGRESS = "Progress"
K_BRIEFING = "StageBriefing"
K_LLM = "LlmExchange"
K_RETRACE = "Retrace"

ENTRY_KINDS = (K_USER, K_EXPLANATION, K_STAGE_RESULT, K_GUARDLINE, K_ERROR,
               K_PROGRESS, K_BRIEFING, K_LLM, K_RETRACE)

#: kinds that consume one scripted-responder entry; counting them in a stored
#: transcript restores the script cursor after a crash
EXCHANGE_KINDS = (K_GUARDLINE, K_LLM)


@dataclass(frozen=True)
class TranscriptEntry:
    ordinal: int
    kind: str
    stage: str
    payload: dict
    at_ms: int

    def to_json(self) -> dict:
        return {"ordinal": self.ordinal, "kind": self.kind, "stage": self.stage,
                "payload": self.payload, "at_ms": self.at_ms}

    @classmethod
    def from_json(cls, data: dict) -> "TranscriptEntry":
        return cls(ordinal=data["ordinal"], kind=data["kind"], stage=data["stage"],
                   payload=data["payload"], at_ms=data["at_ms"])


@dataclass
class Checkpoint:
    stage: Stage
    artifacts: dict
    created_at: int
    directives: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"stage": self.stage.name, "artifacts": self.artifacts,
                "created_at": self.created_at, "directives": list(self.directives)}

    @classmethod
    def from_json(cls, data: dict) -> "Checkpoint":
        return cls(stage=Stage[data["stage"]], artifacts=data["artifacts"],
                   created_at=data["created_at"], directives=list(data["directives"]))


@dataclass
class InterventionEvent:
    text: str
    received_at: int
    resolved_target: Stage | None = None

    def to_json(self) -> dict:
        return {"text": self.text, "received_at": self.received_at,
                "resolved_target": self.resolved_target.name if self.resolved_target else None}

    @classmethod
    def from_json(cls, data: dict) -> "InterventionEvent":
        target = data.get("resolved_target")
        return cls(text=data["text"], received_at=data["received_at"],
                   resolved_target=Stage[target] if target else None)


class InterventionPending(Exception):
    """Raised inside a stage handler when queued interventions must win."""


@dataclass
class SessionState:
    session_id: str
    query: str
    current_stage: Stage = Stage.Intake
    status: Status = Status.Running
    checkpoints: dict[Stage, Checkpoint] = field(default_factory=dict)
    transcript: list[TranscriptEntry] = field(default_factory=list)
    pending_interventions: deque = field(default_factory=deque)
    stage_directives: dict[Stage, list[str]] = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    last_committed_ordinal: int = 0
    created_at: int = 0
    clock_ms: int = 0  # last issued logical tick; persisted so recovery resumes it

    @property
    def artifacts(self) -> dict:
        """Live artifact view: the newest checkpoint's cumulative map."""
        if not self.checkpoints:
            return {}
        latest = max(self.checkpoints, key=lambda s: s.ordinal)
        return self.checkpoints[latest].artifacts

    def directives_for(self, stage: Stage) -> list[str]:
        return list(self.stage_directives.get(stage, []))

    def add_directive(self, stage: Stage, text: str) -> None:
        self.stage_directives.setdefault(stage, []).append(text)

    def next_ordinal(self) -> int:
        # ordinals are 1-based: a client that has seen nothing resumes with 0
        return len(self.transcript) + 1

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "query": self.query,
            "current_stage": self.current_stage.name,
            "status": self.status.value,
            "checkpoints": {s.name: c.to_json() for s, c in sorted(
                self.checkpoints.items(), key=lambda kv: kv[0].ordinal)},
            "transcript": [e.to_json() for e in self.transcript],
            "pending_interventions": [e.to_json() for e in self.pending_interventions],
            "stage_directives": {s.name: list(d) for s, d in sorted(
                self.stage_directives.items(), key=lambda kv: kv[0].ordinal)},
            "inputs": self.inputs,
            "last_committed_ordinal": self.last_committed_ordinal,
            "created_at": self.created_at,
            "clock_ms": self.clock_ms,
        }


def start_session(session_id: str, query: str, at_ms: int = 0,
                  inputs: dict | None = None) -> SessionState:
    """Fresh session at Intake with the opening user message transcribed."""
    if not query or not query.strip():
        raise EmptyQuery("query must be non-empty")
    session = SessionState(session_id=session_id, query=query.strip(),
                           inputs=inputs or {}, created_at=at_ms)
    session.transcript.append(TranscriptEntry(
        ordinal=1, kind=K_USER, stage=Stage.Intake.name,
        payload={"text": session.query, "role": "query"}, at_ms=at_ms))
    return session


def checkpoint_invariant_ok(session: SessionState) -> bool:
    """Checkpoints cover exactly the stages before the current one.

    AwaitingUser and the terminal statuses rest at the last completed stage,
    so their own checkpoint is included there.
    """
    have = {s.ordinal for s in session.checkpoints}
    cur = session.current_stage.ordinal
    if session.status in (Status.AwaitingUser, Status.Completed):
        want = set(range(cur + 1))
    else:
        want = set(range(cur))
    return have == want
