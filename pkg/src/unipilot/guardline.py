"""Two-phase safety guard-line: input filtering and output censor/revise.

Fails closed: a forbidden verdict or an exhausted revision budget surfaces the
fixed refusal text, never model-generated content.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import GuardRefusal
from .gateway import CompletionRequest, LlmGateway
from .prompts import PromptLibrary
from .structured import SCHEMAS, complete_structured

#: Emitted verbatim whenever the guard refuses; never model-generated.
REFUSAL_TEXT = "This content was withheld by the safety guard-line."

DEFAULT_MAX_ROUNDS = 3


class Verdict(enum.Enum):
    Safe = "safe"
    Revisable = "revisable"
    Forbidden = "forbidden"


@dataclass(frozen=True)
class FilteredInput:
    original: str
    allowed: bool
    rewritten: str
    reason: str


@dataclass(frozen=True)
class CensorVerdict:
    verdict: Verdict
    critique: str


@dataclass(frozen=True)
class SafeOutput:
    text: str
    revisions: int
    history: tuple[tuple[str, CensorVerdict], ...] = field(default_factory=tuple)


class Guardline:
    """Wraps a gateway whose recorder files entries as guard-line actions."""

    def __init__(self, gateway: LlmGateway, library: PromptLibrary,
                 max_rounds: int = DEFAULT_MAX_ROUNDS, structured_attempts: int = 2,
                 censor_artifacts: bool = False):
        self.gateway = gateway
        self.library = library
        self.max_rounds = max_rounds
        self.structured_attempts = structured_attempts
        # optional hook: also censor generated code artifacts (off by default)
        self.censor_artifacts = censor_artifacts

    def filter_input(self, user_text: str) -> FilteredInput:
        if not user_text.strip():
            raise ValueError("user_text must be non-empty")
        prompt = self.library.render("input-filter", {"user_input": user_text})
        request = CompletionRequest.build("input-filter", prompt)
        verdict = complete_structured(self.gateway, request, SCHEMAS["filter-verdict"],
                                      max_attempts=self.structured_attempts)
        return FilteredInput(original=user_text, allowed=verdict["allowed"],
                             rewritten=verdict["rewritten"], reason=verdict["reason"])

    def censor_output(self, candidate_text: str) -> CensorVerdict:
        if not candidate_text.strip():
            raise ValueError("candidate_text must be non-empty")
        prompt = self.library.render("output-revise",
                                     {"candidate": candidate_text, "critique": ""})
        request = CompletionRequest.build("output-revise", prompt)
        parsed = complete_structured(self.gateway, request, SCHEMAS["censor-verdict"],
                                     max_attempts=self.structured_attempts)
        return CensorVerdict(verdict=Verdict(parsed["verdict"]), critique=parsed["critique"])

    def _revise(self, candidate: str, critique: str) -> str:
        prompt = self.library.render("output-revise",
                                     {"candidate": candidate, "critique": critique})
        request = CompletionRequest.build("output-revise", prompt)
        return self.gateway.complete(request).raw_text.strip()

    def revise_until_safe(self, initial_text: str,
                          max_rounds: int | None = None) -> SafeOutput:
        """Censor, revise, repeat; at most max_rounds revisions.

        Raises GuardRefusal on a forbidden verdict or when the budget runs out
        without a safe verdict.
        """
        rounds = self.max_rounds if max_rounds is None else max_rounds
        if rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        history: list[tuple[str, CensorVerdict]] = []
        candidate = initial_text
        for round_no in range(rounds + 1):
            verdict = self.censor_output(candidate)
            history.append((candidate, verdict))
            if verdict.verdict is Verdict.Safe:
                return SafeOutput(text=candidate, revisions=len(history) - 1,
                                  history=tuple(history))
            if verdict.verdict is Verdict.Forbidden:
                raise GuardRefusal(REFUSAL_TEXT, cause="forbidden",
                                   critique=verdict.critique)
            if round_no == rounds:
                break
            candidate = self._revise(candidate, verdict.critique)
        raise GuardRefusal(REFUSAL_TEXT, cause="budget_exhausted", rounds=rounds)
