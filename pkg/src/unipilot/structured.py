"""Structured-output parsing for model responses.

Exactly three repair classes, applied in a fixed order to text that does not
already parse: strip surrounding code fences, extract the first balanced
top-level JSON object or array, drop trailing commas. Nothing else is fixed.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Callable

from .errors import SchemaViolation, StructuredOutputFailed, UnparseableOutput
from .gateway import ChatMessage, CompletionRequest, CompletionResponse, LlmGateway

_FENCE_RE = re.compile(r"^```[a-zA-Z0-9_-]*\s*\n(.*?)\n?```\s*$", re.DOTALL)


def _strip_fences(text: str) -> str:
    m = _FENCE_RE.match(text.strip())
    return m.group(1) if m else text


def _extract_balanced(text: str) -> str:
    opens = {"{": "}", "[": "]"}
    start = None
    for i, ch in enumerate(text):
        if ch in opens:
            start = i
            break
    if start is None:
        return text
    close = opens[text[start]]
    open_ch = text[start]
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == open_ch:
            depth += 1
        elif ch == close:
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return text


def _drop_trailing_commas(text: str) -> str:
    out = []
    in_string = False
    escaped = False
    for ch in text:
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            out.append(ch)
            continue
        if ch == '"':
            in_string = True
            out.append(ch)
            continue
        if ch in "}]":
            # erase a comma that directly precedes the close (whitespace allowed)
            j = len(out) - 1
            while j >= 0 and out[j] in " \t\r\n":
                j -= 1
            if j >= 0 and out[j] == ",":
                del out[j]
        out.append(ch)
    return "".join(out)


REPAIR_CLASSES: tuple[Callable[[str], str], ...] = (
    _strip_fences,
    _extract_balanced,
    _drop_trailing_commas,
)


def repair_json_text(text: str) -> str:
    """Run the repair pipeline; already-valid JSON is returned unchanged."""
    try:
        json.loads(text)
        return text
    except ValueError:
        pass
    for repair in REPAIR_CLASSES:
        text = repair(text)
    return text


@dataclass(frozen=True)
class SchemaRef:
    """A registered output shape: name plus a validator returning the value."""

    name: str
    kind: str  # "json" or "text"
    validate: Callable[[object], object]


def _require(cond: bool, message: str, path: str):
    if not cond:
        raise SchemaViolation(message, path=path)


MODALITIES = (
    "text", "image", "audio", "video", "document", "table",
    "semantic_seg_img", "ner", "categorical", "numerical", "label",
)


def _validate_modality_map(value):
    _require(isinstance(value, dict), "expected a JSON object", "$")
    labels = []
    for col, modality in value.items():
        _require(isinstance(modality, str), "modality must be a string", f"$.{col}")
        _require(modality in MODALITIES,
                 f"unknown modality {modality!r}", f"$.{col}")
        if modality == "label":
            labels.append(col)
    _require(len(labels) <= 1, f"multiple label columns: {sorted(labels)}", "$")
    return value


def _validate_search_space(value):
    _require(isinstance(value, dict), "expected a JSON object", "$")
    for name, candidates in value.items():
        _require(isinstance(candidates, list) and candidates,
                 "candidates must be a non-empty list", f"$.{name}")
        for i, cand in enumerate(candidates):
            _require(isinstance(cand, (int, float, str, bool)),
                     "candidate must be a scalar", f"$.{name}[{i}]")
    return value


def _validate_descriptions(value):
    _require(isinstance(value, dict), "expected a JSON object", "$")
    for name, desc in value.items():
        _require(isinstance(desc, str) and desc.strip() != "",
                 "description must be non-empty text", f"$.{name}")
    return value


def _validate_plan(value):
    _require(isinstance(value, dict), "expected a JSON object", "$")
    for key in ("data_processor_codes", "reason"):
        _require(key in value, f"missing key {key!r}", f"$.{key}")
        _require(isinstance(value[key], str) and value[key].strip() != "",
                 f"{key} must be non-empty text", f"$.{key}")
    return value


def _validate_censor_verdict(value):
    _require(isinstance(value, dict), "expected a JSON object", "$")
    verdict = value.get("verdict")
    _require(verdict in ("safe", "revisable", "forbidden"),
             f"verdict must be safe/revisable/forbidden, got {verdict!r}", "$.verdict")
    critique = value.get("critique", "")
    _require(isinstance(critique, str), "critique must be a string", "$.critique")
    if verdict == "safe":
        value["critique"] = ""
    else:
        _require(critique.strip() != "", f"{verdict} verdict needs a critique", "$.critique")
    return value


def _validate_filter_verdict(value):
    _require(isinstance(value, dict), "expected a JSON object", "$")
    _require(isinstance(value.get("allowed"), bool), "allowed must be a boolean", "$.allowed")
    rewritten = value.get("rewritten", "")
    reason = value.get("reason", "")
    _require(isinstance(rewritten, str), "rewritten must be a string", "$.rewritten")
    _require(isinstance(reason, str), "reason must be a string", "$.reason")
    if value["allowed"]:
        _require(rewritten.strip() != "", "allowed input needs rewritten text", "$.rewritten")
    else:
        _require(reason.strip() != "", "refused input needs a reason", "$.reason")
    return value


def _validate_error_explanation(value):
    _require(isinstance(value, dict), "expected a JSON object", "$")
    for key in ("causes", "resolutions"):
        items = value.get(key)
        _require(isinstance(items, list) and items, f"{key} must be a non-empty list", f"$.{key}")
        for i, item in enumerate(items):
            _require(isinstance(item, str) and item.strip() != "",
                     f"{key} entries must be non-empty text", f"$.{key}[{i}]")
    summary = value.get("summary", "")
    _require(isinstance(summary, str), "summary must be a string", "$.summary")
    return value


_CATEGORY_LABELS = {"discriminative": "Discriminative",
                    "diffusion": "GenerativeDiffusion",
                    "llm": "GenerativeLLM"}


def _validate_category_label(value):
    label = str(value).strip().strip('"\'`.').strip().lower()
    _require(label in _CATEGORY_LABELS,
             f"unknown task category label {value!r}", "$")
    return _CATEGORY_LABELS[label]


def text_enum_schema(name: str, allowed: list[str]) -> SchemaRef:
    """Ad-hoc text schema matching one of `allowed` case-insensitively."""
    lookup = {a.lower(): a for a in allowed}

    def validate(value):
        label = str(value).strip().strip('"\'`.').strip()
        _require(label.lower() in lookup, f"{label!r} not one of {sorted(allowed)}", "$")
        return lookup[label.lower()]

    return SchemaRef(name, "text", validate)


SCHEMAS: dict[str, SchemaRef] = {
    s.name: s
    for s in (
        SchemaRef("category-label", "text", _validate_category_label),
        SchemaRef("modality-map", "json", _validate_modality_map),
        SchemaRef("search-space", "json", _validate_search_space),
        SchemaRef("hyperparam-descriptions", "json", _validate_descriptions),
        SchemaRef("preprocess-plan", "json", _validate_plan),
        SchemaRef("censor-verdict", "json", _validate_censor_verdict),
        SchemaRef("filter-verdict", "json", _validate_filter_verdict),
        SchemaRef("error-explanation", "json", _validate_error_explanation),
    )
}


def parse_structured(response: CompletionResponse, schema: SchemaRef):
    """Parse and validate a raw completion against one registered schema."""
    if schema.kind == "text":
        return schema.validate(response.raw_text)
    repaired = repair_json_text(response.raw_text)
    try:
        value = json.loads(repaired)
    except ValueError as exc:
        raise UnparseableOutput(f"no repair class yields valid JSON: {exc}") from exc
    return schema.validate(value)


CORRECTIVE_PROMPT = (
    "The previous response could not be used: {error} "
    "Respond again, following the required output format exactly."
)


def complete_structured(gateway: LlmGateway, request: CompletionRequest,
                        schema: SchemaRef, max_attempts: int = 2):
    """Completion plus parse, re-prompting with the parse error on failure."""
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    last_error: Exception | None = None
    current = request
    for _ in range(max_attempts):
        response = gateway.complete(current)
        try:
            return parse_structured(response, schema)
        except (UnparseableOutput, SchemaViolation) as exc:
            last_error = exc
            current = current.with_followup(
                ChatMessage("assistant", response.raw_text or "(empty)"),
                ChatMessage("user", CORRECTIVE_PROMPT.format(error=exc.message)),
            )
    raise StructuredOutputFailed(
        f"no conforming output after {max_attempts} attempts: {last_error}"
    )
