"""Versioned prompt template assets and placeholder rendering.

Templates live as markdown files with a small front-matter block; bodies are
treated as opaque text apart from ``{name}`` placeholder tokens. Values are
substituted verbatim, with no escaping.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigError, MissingPlaceholder, UnknownPlaceholder

# Placeholder tokens are lowercase identifiers in single braces; JSON examples
# and shell ${VARS} embedded in bodies never match.
_PLACEHOLDER_RE = re.compile(r"\{([a-z_][a-z0-9_]*)\}")

TEMPLATE_IDS = (
    "task-category",
    "modality-inference",
    "preprocess-codegen",
    "fusion-codegen",
    "hyperparam-description",
    "hyperparam-search-space",
    "diffusion-job",
    "dataset-standardize",
    "config-modify",
    "llm-finetune-job",
    "explainer",
    "error-explainer",
    "next-stage",
    "input-filter",
    "output-revise",
)


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    version: int
    body: str

    @property
    def required_placeholders(self) -> frozenset[str]:
        return frozenset(_PLACEHOLDER_RE.findall(self.body))

    def render(self, bindings: dict[str, str]) -> str:
        """Substitute every placeholder; bindings must cover them exactly."""
        required = self.required_placeholders
        for name in sorted(required - bindings.keys()):
            raise MissingPlaceholder(
                f"template {self.template_id!r} needs placeholder {name!r}", name=name
            )
        for name in sorted(bindings.keys() - required):
            raise UnknownPlaceholder(
                f"template {self.template_id!r} has no placeholder {name!r}", name=name
            )
        return _PLACEHOLDER_RE.sub(lambda m: bindings[m.group(1)], self.body)


def _parse_asset(text: str, source: str) -> PromptTemplate:
    if not text.startswith("---\n"):
        raise ConfigError(f"template asset {source} missing front-matter")
    try:
        header, body = text[4:].split("\n---\n", 1)
    except ValueError:
        raise ConfigError(f"template asset {source} missing front-matter terminator") from None
    meta = {}
    for line in header.splitlines():
        key, _, value = line.partition(":")
        meta[key.strip()] = value.strip()
    if "id" not in meta or "version" not in meta:
        raise ConfigError(f"template asset {source} front-matter needs id and version")
    return PromptTemplate(meta["id"], int(meta["version"]), body.lstrip("\n"))


class PromptLibrary:
    """Immutable catalog of the shipped templates, optionally from a custom dir."""

    def __init__(self, asset_dir: Path | None = None):
        self._templates: dict[str, PromptTemplate] = {}
        if asset_dir is not None:
            for path in sorted(Path(asset_dir).glob("*.md")):
                tpl = _parse_asset(path.read_text(encoding="utf-8"), str(path))
                self._templates[tpl.template_id] = tpl
        else:
            root = resources.files("unipilot").joinpath("prompts")
            for entry in sorted(root.iterdir(), key=lambda e: e.name):
                if entry.name.endswith(".md"):
                    tpl = _parse_asset(entry.read_text(encoding="utf-8"), entry.name)
                    self._templates[tpl.template_id] = tpl
        missing = set(TEMPLATE_IDS) - self._templates.keys()
        if missing:
            raise ConfigError(f"prompt catalog incomplete, missing {sorted(missing)}")

    def get(self, template_id: str) -> PromptTemplate:
        try:
            return self._templates[template_id]
        except KeyError:
            raise ConfigError(f"unknown prompt template {template_id!r}") from None

    def render(self, template_id: str, bindings: dict[str, str]) -> str:
        return self.get(template_id).render(bindings)

    def list_templates(self) -> list[dict]:
        """Catalog rows: id, version, and required placeholder names."""
        return [
            {
                "template_id": t.template_id,
                "version": t.version,
                "required_placeholders": sorted(t.required_placeholders),
            }
            for t in sorted(self._templates.values(), key=lambda t: t.template_id)
        ]
