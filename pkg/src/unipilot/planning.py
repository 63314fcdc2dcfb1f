"""Planning stage handlers: preprocessing, fusion, hyperparameter space, config edits.

Every invariant on a plan is enforced by local deterministic code after the
model responds; nothing structural is ever trusted from the model.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .configdoc import ConfigDocument, parse_scalar
from .errors import (
    PlanInvalid,
    SchemaViolation,
    SpaceInvalid,
    StructuredOutputFailed,
    TooFewModels,
    UnintendedEdit,
    UnknownKey,
)
from .gateway import ChatMessage, CompletionRequest, LlmGateway
from .prompts import PromptLibrary
from .structured import SCHEMAS, SchemaRef, _strip_fences, complete_structured


@dataclass(frozen=True)
class PreprocessPlan:
    processors: tuple[tuple[str, tuple[str, ...], str], ...]  # (modality, columns, code)
    includes_label: bool
    reason: str = ""

    def to_json(self) -> dict:
        return {
            "processors": [
                {"modality": m, "columns": list(cols), "code": code}
                for m, cols, code in self.processors
            ],
            "includes_label": self.includes_label,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class FusionPlan:
    base_models: tuple[tuple[str, int], ...]
    target_dim: int
    adapters: tuple[tuple[str, int, int], ...]  # (name, in_dim, out_dim)
    head: dict
    outputs: dict
    code_text: str = ""

    def to_json(self) -> dict:
        return {
            "base_models": [[n, d] for n, d in self.base_models],
            "target_dim": self.target_dim,
            "adapters": [[n, i, o] for n, i, o in self.adapters],
            "head": self.head,
            "outputs": self.outputs,
            "code_text": self.code_text,
        }


@dataclass(frozen=True)
class SearchSpace:
    params: dict[str, list]
    origin_config: dict[str, object]

    def to_json(self) -> dict:
        return {"params": {k: list(v) for k, v in sorted(self.params.items())},
                "origin_config": dict(sorted(self.origin_config.items()))}

    @classmethod
    def from_json(cls, data: dict) -> "SearchSpace":
        return cls(params={k: list(v) for k, v in data["params"].items()},
                   origin_config=dict(data["origin_config"]))


def _processor_marker(modality: str) -> re.Pattern:
    return re.compile(rf"\b{re.escape(modality)}_processor\b")


def _scan_processor_modalities(code: str) -> set[str]:
    from .structured import MODALITIES

    return {m for m in MODALITIES if _processor_marker(m).search(code)}


def validate_preprocess_code(code: str, modalities_present: set[str]) -> list[str]:
    """Deterministic coverage check over `<modality>_processor` markers."""
    found = _scan_processor_modalities(code)
    violations = []
    if "label" not in found:
        violations.append("label processor required")
    for modality in sorted(modalities_present - found - {"label"}):
        violations.append(f"missing processor for modality: {modality}")
    for modality in sorted(found - modalities_present - {"label"}):
        violations.append(f"processor for absent modality: {modality}")
    return violations


def plan_preprocessing(modalities, model_config: ConfigDocument | None,
                       gateway: LlmGateway, library: PromptLibrary,
                       structured_attempts: int = 2) -> PreprocessPlan:
    if not modalities.columns:
        raise ValueError("modality map must be non-empty")
    image_cfg = "n/a"
    seg_cfg = "n/a"
    if model_config is not None:
        values = model_config.values()
        image_cfg = json.dumps({k: v for k, v in values.items() if "image" in k} or "n/a")
        seg_cfg = json.dumps({k: v for k, v in values.items() if "semantic" in k} or "n/a")
    prompt = library.render("preprocess-codegen", {
        "modality": modalities.canonical_text(),
        "image_cfg": image_cfg,
        "semantic_seg_img_cfg": seg_cfg,
    })
    request = CompletionRequest.build("preprocess-codegen", prompt)

    present = set(modalities.modalities_present)
    base = SCHEMAS["preprocess-plan"]

    def validate(value):
        parsed = base.validate(value)
        violations = validate_preprocess_code(parsed["data_processor_codes"], present)
        if violations:
            raise SchemaViolation("; ".join(violations), path="$.data_processor_codes")
        return parsed

    schema = SchemaRef("preprocess-plan", "json", validate)
    try:
        parsed = complete_structured(gateway, request, schema,
                                     max_attempts=structured_attempts)
    except StructuredOutputFailed as exc:
        raise PlanInvalid(f"preprocessing plan rejected: {exc}",
                          violations=[str(exc)]) from exc
    code = parsed["data_processor_codes"]
    by_modality = {}
    for column, modality in sorted(modalities.columns.items()):
        by_modality.setdefault(modality, []).append(column)
    processors = tuple(
        (modality, tuple(cols), code) for modality, cols in sorted(by_modality.items())
    )
    return PreprocessPlan(processors=processors, includes_label=True,
                          reason=parsed["reason"])


def fusion_skeleton(base_models: list[tuple[str, int]]) -> FusionPlan:
    """Pure function of the dim list: adapters map every model to max(dims)."""
    if len(base_models) < 2:
        raise TooFewModels("fusion needs at least 2 base models")
    for name, dim in base_models:
        if dim <= 0:
            raise ValueError(f"base model {name!r} has non-positive out_dim {dim}")
    target = max(dim for _, dim in base_models)
    adapters = tuple((name, dim, target) for name, dim in base_models)
    head = {"kind": "mlp", "learnable": True, "in_dim": target}
    outputs = {
        name: {"logits": f"{name}.logits", "features": f"{name}.features", "weight": 1.0}
        for name, _ in base_models
    }
    return FusionPlan(base_models=tuple(base_models), target_dim=target,
                      adapters=adapters, head=head, outputs=outputs)


def plan_fusion(base_models: list[tuple[str, int]], gateway: LlmGateway,
                library: PromptLibrary) -> FusionPlan:
    """Deterministic skeleton; the model contributes only the code text."""
    skeleton = fusion_skeleton(base_models)
    prompt = library.render("fusion-codegen", {
        "base_configs": json.dumps(
            [{"name": n, "out_features_dim": d} for n, d in base_models]),
        "fusion_config": json.dumps(
            {"target_dim": skeleton.target_dim,
             "adapters": [[n, i, o] for n, i, o in skeleton.adapters]}),
    })
    request = CompletionRequest.build("fusion-codegen", prompt)
    code = gateway.complete(request).raw_text
    return FusionPlan(base_models=skeleton.base_models, target_dim=skeleton.target_dim,
                      adapters=skeleton.adapters, head=skeleton.head,
                      outputs=skeleton.outputs, code_text=code)


def _numeric_literals(config: ConfigDocument) -> dict[str, str]:
    literals = {}
    for key in config.keys:
        value = config.value(key)
        if isinstance(value, bool):
            continue
        if isinstance(value, (int, float)):
            literals[key] = config.raw_value(key).strip()
    return literals


def describe_hyperparameters(config: ConfigDocument, gateway: LlmGateway,
                             library: PromptLibrary,
                             structured_attempts: int = 2) -> dict[str, str]:
    if not config.keys:
        raise ValueError("config has no parameters")
    prompt = library.render("hyperparam-description", {"configs": config.raw_text})
    request = CompletionRequest.build("hyperparam-description", prompt)

    expected = set(config.keys)
    literals = _numeric_literals(config)
    base = SCHEMAS["hyperparam-descriptions"]

    def validate(value):
        parsed = base.validate(value)
        for name in sorted(parsed.keys() - expected):
            raise SchemaViolation(f"unknown parameter: {name}", path=f"$.{name}")
        for name in sorted(expected - parsed.keys()):
            raise SchemaViolation(f"missing description: {name}", path=f"$.{name}")
        all_text = " ".join(parsed.values())
        for name, literal in literals.items():
            if literal in all_text:
                raise SchemaViolation(f"value leak: {name}", path=f"$.{name}")
        return parsed

    schema = SchemaRef("hyperparam-descriptions", "json", validate)
    return complete_structured(gateway, request, schema,
                               max_attempts=structured_attempts)


def _normalize_candidates(raw) -> list:
    if isinstance(raw, list):
        return raw
    if isinstance(raw, str):
        text = raw.strip()
        try:
            parsed = json.loads(text)
        except ValueError:
            raise SchemaViolation(f"range is not a candidate list: {raw!r}", path="$")
        if isinstance(parsed, list):
            return parsed
    raise SchemaViolation(f"range is not a candidate list: {raw!r}", path="$")


def _contains_value(candidates: list, original) -> bool:
    for cand in candidates:
        if type(cand) is bool or type(original) is bool:
            if cand is original:
                return True
        elif isinstance(cand, (int, float)) and isinstance(original, (int, float)):
            if float(cand) == float(original):
                return True
        elif cand == original:
            return True
    return False


def validate_search_space(space: dict[str, list], config: ConfigDocument) -> list[str]:
    """The four deterministic acceptance rules for a proposed space."""
    violations = []
    config_values = config.values()
    if "checkpoint_identifier" in config_values:
        for name in sorted(space.keys() - {"weight_loss"}):
            violations.append(f"only weight_loss permitted: {name}")
    for name in sorted(space):
        if name not in config_values:
            violations.append(f"unknown parameter: {name}")
            continue
        original = config_values[name]
        candidates = space[name]
        is_numeric = isinstance(original, (int, float)) and not isinstance(original, bool)
        if is_numeric and len(candidates) < 3:
            violations.append(f"fewer than 3 candidates: {name}")
        if not _contains_value(candidates, original):
            violations.append(f"original value not in range: {name}")
    return violations


def infer_search_space(descriptions: dict[str, str], config: ConfigDocument,
                       gateway: LlmGateway, library: PromptLibrary,
                       structured_attempts: int = 2) -> SearchSpace:
    for key in config.keys:
        if key not in descriptions:
            raise ValueError(f"descriptions do not cover config key {key!r}")
    prompt = library.render("hyperparam-search-space", {
        "self_description": json.dumps(descriptions, sort_keys=True),
        "configuration_data": config.raw_text,
    })
    request = CompletionRequest.build("hyperparam-search-space", prompt)
    base = SCHEMAS["search-space"]

    def validate(value):
        if not isinstance(value, dict):
            raise SchemaViolation("expected a JSON object", path="$")
        normalized = {name: _normalize_candidates(raw) for name, raw in value.items()}
        parsed = base.validate(normalized)
        violations = validate_search_space(parsed, config)
        if violations:
            raise SchemaViolation("; ".join(violations), path="$")
        return parsed

    schema = SchemaRef("search-space", "json", validate)
    try:
        params = complete_structured(gateway, request, schema,
                                     max_attempts=structured_attempts)
    except StructuredOutputFailed as exc:
        raise SpaceInvalid(f"search space rejected: {exc}",
                           violations=[str(exc)]) from exc
    origin = {name: config.value(name) for name in params}
    return SearchSpace(params=params, origin_config=origin)


def modify_config(config: ConfigDocument, directives: list[str],
                  substitutions: dict[str, str], gateway: LlmGateway,
                  library: PromptLibrary, context: dict[str, str] | None = None) -> ConfigDocument:
    """LLM proposes the edited text; a deterministic differ enforces intent."""
    for key in substitutions:
        if not config.has(key):
            raise UnknownKey(f"config has no key {key!r}")
    if not substitutions:
        return config
    context = context or {}
    prompt = library.render("config-modify", {
        "llm_address": context.get("llm_address", "n/a"),
        "cfg_address": context.get("cfg_address", "inline"),
        "data": context.get("data", "n/a"),
        "cfg": config.raw_text,
    })
    wanted = "\n".join(f"{k} -> {v}" for k, v in sorted(substitutions.items()))
    user_lines = ["Apply exactly these value substitutions:", wanted]
    if directives:
        user_lines += ["Directives:"] + list(directives)
    request = CompletionRequest.build("config-modify", prompt, user="\n".join(user_lines))
    proposed_text = _strip_fences(gateway.complete(request).raw_text.strip())
    if config.raw_text.endswith("\n") and not proposed_text.endswith("\n"):
        proposed_text += "\n"
    proposed = ConfigDocument.parse(proposed_text)

    old_lines = config.raw_text.split("\n")
    new_lines = proposed.raw_text.split("\n")
    if len(old_lines) != len(new_lines):
        raise UnintendedEdit("edit changed the line count")
    allowed_lines = {config.line_of(k) for k in substitutions}
    for i, (old, new) in enumerate(zip(old_lines, new_lines)):
        if old != new and i not in allowed_lines:
            raise UnintendedEdit(f"edit touches unrelated line {i + 1}: {old!r}")
    for key in substitutions:
        if key not in proposed.keys:
            raise UnintendedEdit(f"edit removed key {key!r}")
    changed = {k for k in config.diff_keys(proposed)}
    for key in sorted(changed - substitutions.keys()):
        raise UnintendedEdit(f"edit touches other keys: {key}")
    # apply any substitution the model skipped; the differ has verified the rest
    result = proposed
    for key, value in substitutions.items():
        if parse_scalar(result.raw_value(key)) != parse_scalar(str(value)):
            result = result.with_value(key, str(value))
    return result
