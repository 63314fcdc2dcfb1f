"""Chat-completion access: remote OpenAI-compatible endpoint or scripted responder.

Every completion is recorded verbatim through a recorder callback before any
parsing happens, which is what makes transcript replay possible.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import httpx

from .errors import ConfigError, ProviderUnavailable, ScriptExhausted, ScriptMismatch

#: Engine-wide sampling temperature; fixed for reproducibility.
TEMPERATURE = 0.0

API_KEY_ENV = "UNIPILOT_LLM_KEY"

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"unknown chat role {self.role!r}")
        if not self.content:
            raise ConfigError("chat message content must be non-empty")


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[ChatMessage, ...]
    template_id: str
    temperature: float = TEMPERATURE
    max_output_tokens: int = 2048

    @staticmethod
    def build(template_id: str, system: str, user: str | None = None,
              max_output_tokens: int = 2048) -> "CompletionRequest":
        messages = [ChatMessage("system", system)]
        if user:
            messages.append(ChatMessage("user", user))
        return CompletionRequest(tuple(messages), template_id,
                                 max_output_tokens=max_output_tokens)

    def with_followup(self, *turns: ChatMessage) -> "CompletionRequest":
        return CompletionRequest(self.messages + tuple(turns), self.template_id,
                                 self.temperature, self.max_output_tokens)


@dataclass(frozen=True)
class CompletionResponse:
    raw_text: str
    provider: str
    latency_ms: int


class ChatProvider(Protocol):
    name: str

    def complete_once(self, request: CompletionRequest) -> str: ...


@dataclass
class ScriptEntry:
    template_id: str
    response: str
    contains: str | None = None

    def matches(self, request: CompletionRequest) -> bool:
        if self.template_id != request.template_id:
            return False
        if self.contains is None:
            return True
        return any(self.contains in m.content for m in request.messages)


class ScriptedResponder:
    """Deterministic provider driven by an ordered script.

    Strict mode: each request must match the next unconsumed entry. Loose
    mode: the first unconsumed matching entry is consumed, letting one script
    serve call orders that interleave across templates.
    """

    name = "scripted"

    def __init__(self, script: list[ScriptEntry], strict: bool = False):
        self.script = list(script)
        self.strict = strict
        self._consumed = [False] * len(self.script)

    @classmethod
    def from_file(cls, path: str | Path, strict: bool = False) -> "ScriptedResponder":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        entries = [
            ScriptEntry(
                template_id=item["match"]["template_id"],
                contains=item["match"].get("contains"),
                response=item["response"],
            )
            for item in raw
        ]
        return cls(entries, strict=strict)

    @property
    def remaining(self) -> int:
        return self._consumed.count(False)

    def fast_forward(self, count: int) -> None:
        """Mark the first `count` unconsumed entries consumed (crash recovery)."""
        marked = 0
        for i, used in enumerate(self._consumed):
            if marked == count:
                break
            if not used:
                self._consumed[i] = True
                marked += 1

    def complete_once(self, request: CompletionRequest) -> str:
        if self.strict:
            for i, used in enumerate(self._consumed):
                if not used:
                    if not self.script[i].matches(request):
                        raise ScriptMismatch(
                            f"script entry {i} expects template "
                            f"{self.script[i].template_id!r}, got {request.template_id!r}"
                        )
                    self._consumed[i] = True
                    return self.script[i].response
            raise ScriptExhausted(f"no script entries left for {request.template_id!r}")
        for i, used in enumerate(self._consumed):
            if not used and self.script[i].matches(request):
                self._consumed[i] = True
                return self.script[i].response
        raise ScriptExhausted(f"no unconsumed script entry matches {request.template_id!r}")


class ReplayResponder:
    """Feeds back previously recorded raw responses in order."""

    name = "replay"

    def __init__(self, responses: list[str]):
        self._responses = list(responses)
        self._cursor = 0

    def complete_once(self, request: CompletionRequest) -> str:
        if self._cursor >= len(self._responses):
            raise ScriptExhausted("replay tape exhausted")
        text = self._responses[self._cursor]
        self._cursor += 1
        return text


class RemoteChatProvider:
    """OpenAI-compatible chat-completions endpoint."""

    name = "remote"

    def __init__(self, base_url: str, model: str, api_key: str | None = None,
                 timeout_s: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key or os.environ.get(API_KEY_ENV, "")
        self.timeout_s = timeout_s

    def complete_once(self, request: CompletionRequest) -> str:
        body = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = httpx.post(f"{self.base_url}/chat/completions", json=body,
                              headers=headers, timeout=self.timeout_s)
            resp.raise_for_status()
            payload = resp.json()
            return payload["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise ProviderUnavailable(f"chat endpoint failed: {exc}") from exc


#: recorder(template_id, request_text, raw_text, latency_ms)
Recorder = Callable[[str, str, str, int], None]


class LlmGateway:
    """Retry wrapper around a provider, with verbatim audit of every call."""

    def __init__(self, provider: ChatProvider, recorder: Recorder | None = None,
                 transport_retries: int = 3, backoff_base_ms: int = 250,
                 clock=None, sleeper: Callable[[float], None] = time.sleep):
        self.provider = provider
        self.recorder = recorder
        self.transport_retries = transport_retries
        self.backoff_base_ms = backoff_base_ms
        self.clock = clock
        self.sleeper = sleeper

    def _now(self) -> int:
        return self.clock.now_ms() if self.clock is not None else int(time.time() * 1000)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        started = self._now()
        raw = None
        for attempt in range(1, self.transport_retries + 1):
            try:
                raw = self.provider.complete_once(request)
                break
            except ProviderUnavailable:
                if attempt == self.transport_retries:
                    raise
                self.sleeper(self.backoff_base_ms * (2 ** (attempt - 1)) / 1000.0)
        latency = max(0, self._now() - started)
        response = CompletionResponse(raw_text=raw, provider=self.provider.name,
                                      latency_ms=latency)
        if self.recorder is not None:
            prompt_text = "\n".join(f"{m.role}: {m.content}" for m in request.messages)
            self.recorder(request.template_id, prompt_text, raw, latency)
        return response
