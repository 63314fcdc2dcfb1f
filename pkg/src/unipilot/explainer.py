"""Plain-language explanations of stage results, errors, and stage handoffs.

All generated text passes the guard-line before it reaches a transcript; a
refusal substitutes the fixed refusal text and never stops the session.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ErrorReport, GuardRefusal, StructuredOutputFailed, UniPilotError
from .gateway import CompletionRequest, LlmGateway
from .guardline import REFUSAL_TEXT, Guardline
from .jsonutil import canonical_dumps
from .prompts import PromptLibrary
from .session import Stage
from .structured import SCHEMAS, complete_structured

CARD_TEXT_PROMPT_LIMIT = 2000


@dataclass(frozen=True)
class Explanation:
    subject_kind: str  # "StageResult" | "Error"
    text: str
    context_refs: tuple[str, ...] = ()
    refused: bool = False

    def to_json(self) -> dict:
        return {"subject_kind": self.subject_kind, "text": self.text,
                "context_refs": list(self.context_refs), "refused": self.refused}


@dataclass(frozen=True)
class StageBriefing:
    completed: Stage
    upcoming: Stage
    text: str
    accepts_directives: bool = True

    def to_json(self) -> dict:
        return {"completed": self.completed.name, "upcoming": self.upcoming.name,
                "text": self.text, "accepts_directives": self.accepts_directives}


def _truncate_card_text(value):
    if isinstance(value, dict):
        out = {}
        for key, item in value.items():
            if key == "card_text" and isinstance(item, str):
                out[key] = item[:CARD_TEXT_PROMPT_LIMIT]
            else:
                out[key] = _truncate_card_text(item)
        return out
    if isinstance(value, list):
        return [_truncate_card_text(v) for v in value]
    return value


class Explainer:
    def __init__(self, gateway: LlmGateway, guardline: Guardline,
                 library: PromptLibrary, structured_attempts: int = 2):
        self.gateway = gateway
        self.guardline = guardline
        self.library = library
        self.structured_attempts = structured_attempts

    def explain_result(self, result_artifact: dict, query: str,
                       context: dict | None = None,
                       context_refs: tuple[str, ...] = ()) -> Explanation:
        prompt = self.library.render("explainer", {
            "result": canonical_dumps(_truncate_card_text(result_artifact)),
            "query": query,
            "context": canonical_dumps(_truncate_card_text(context or {})),
        })
        request = CompletionRequest.build("explainer", prompt)
        try:
            raw = self.gateway.complete(request).raw_text.strip()
            safe = self.guardline.revise_until_safe(raw)
            return Explanation("StageResult", safe.text, context_refs)
        except UniPilotError:
            # fail closed: without a safe verdict the text never goes out
            return Explanation("StageResult", REFUSAL_TEXT, context_refs, refused=True)

    def explain_error(self, report: ErrorReport, query: str,
                      context: dict | None = None) -> Explanation:
        """Causes/resolutions breakdown; falls back to the raw message, never raises."""
        refs = ("artifact_dump",) if report.artifact_dump is not None else ()
        prompt = self.library.render("error-explainer", {
            "error": canonical_dumps(report.to_json()),
            "query": query,
            "context": canonical_dumps(_truncate_card_text(context or {})),
        })
        request = CompletionRequest.build("error-explainer", prompt)
        try:
            parsed = complete_structured(self.gateway, request,
                                         SCHEMAS["error-explanation"],
                                         max_attempts=self.structured_attempts)
        except (StructuredOutputFailed, UniPilotError):
            return Explanation("Error", report.message, refs)
        lines = [parsed.get("summary") or report.message, "", "Probable causes:"]
        lines += [f"- {c}" for c in parsed["causes"]]
        lines += ["", "Potential resolutions:"]
        lines += [f"- {r}" for r in parsed["resolutions"]]
        text = "\n".join(lines)
        try:
            safe = self.guardline.revise_until_safe(text)
            return Explanation("Error", safe.text, refs)
        except GuardRefusal:
            return Explanation("Error", report.message, refs, refused=True)

    def next_stage_briefing(self, completed: Stage, upcoming: Stage,
                            query: str) -> StageBriefing:
        if upcoming.ordinal != completed.ordinal + 1:
            raise ValueError(
                f"stages not adjacent: {completed.name} -> {upcoming.name}")
        prompt = self.library.render("next-stage", {
            "completed_stage": completed.name,
            "upcoming_stage": upcoming.name,
            "query": query,
        })
        request = CompletionRequest.build("next-stage", prompt)
        try:
            raw = self.gateway.complete(request).raw_text.strip()
            safe = self.guardline.revise_until_safe(raw)
            return StageBriefing(completed, upcoming, safe.text)
        except UniPilotError:
            return StageBriefing(completed, upcoming, REFUSAL_TEXT)
