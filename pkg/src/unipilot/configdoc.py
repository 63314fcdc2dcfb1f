"""Trainer config files as ordered key-path maps over preserved raw text.

Two concrete syntaxes: flat assignment lines (``key = value``) and YAML-like
nested maps (``section:`` with indented children). Edits rewrite only the
value span of the targeted line so unrelated lines stay byte-identical.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ConfigError, UnknownKey

_FLAT_RE = re.compile(r"^(\s*)([A-Za-z_][A-Za-z0-9_]*)(\s*=\s*)(.*)$")
_NESTED_RE = re.compile(r"^(\s*)([A-Za-z_][A-Za-z0-9_]*)(:\s*)(.*)$")


@dataclass(frozen=True)
class ConfigEntry:
    key_path: str
    raw_value: str
    line_no: int


def parse_scalar(raw: str):
    """Best-effort typed view of a raw config value."""
    text = raw.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


class ConfigDocument:
    """Ordered key-path → value map plus the exact text it came from."""

    def __init__(self, raw_text: str, syntax: str, entries: list[ConfigEntry]):
        self.raw_text = raw_text
        self.syntax = syntax
        self._entries = {e.key_path: e for e in entries}

    @classmethod
    def parse(cls, raw_text: str) -> "ConfigDocument":
        lines = raw_text.split("\n")
        flat_hits = sum(1 for ln in lines if _FLAT_RE.match(ln) and "=" in ln)
        if flat_hits:
            return cls._parse_flat(raw_text, lines)
        return cls._parse_nested(raw_text, lines)

    @classmethod
    def _parse_flat(cls, raw_text: str, lines: list[str]) -> "ConfigDocument":
        entries = []
        for i, line in enumerate(lines):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            m = _FLAT_RE.match(line)
            if m:
                entries.append(ConfigEntry(m.group(2), m.group(4), i))
        if not entries:
            raise ConfigError("config has no key = value lines")
        return cls(raw_text, "flat", entries)

    @classmethod
    def _parse_nested(cls, raw_text: str, lines: list[str]) -> "ConfigDocument":
        entries = []
        stack: list[tuple[int, str]] = []  # (indent, key)
        for i, line in enumerate(lines):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            m = _NESTED_RE.match(line)
            if not m:
                continue
            indent = len(m.group(1))
            key, value = m.group(2), m.group(4)
            while stack and stack[-1][0] >= indent:
                stack.pop()
            path = ".".join([k for _, k in stack] + [key])
            if value.strip() == "":
                stack.append((indent, key))
            else:
                entries.append(ConfigEntry(path, value, i))
        if not entries:
            raise ConfigError("config has no recognizable entries")
        return cls(raw_text, "nested", entries)

    @property
    def keys(self) -> list[str]:
        return list(self._entries)

    def has(self, key_path: str) -> bool:
        return key_path in self._entries

    def raw_value(self, key_path: str) -> str:
        try:
            return self._entries[key_path].raw_value
        except KeyError:
            raise UnknownKey(f"config has no key {key_path!r}") from None

    def line_of(self, key_path: str) -> int:
        try:
            return self._entries[key_path].line_no
        except KeyError:
            raise UnknownKey(f"config has no key {key_path!r}") from None

    def value(self, key_path: str):
        return parse_scalar(self.raw_value(key_path))

    def values(self) -> dict[str, object]:
        return {k: parse_scalar(e.raw_value) for k, e in self._entries.items()}

    def with_value(self, key_path: str, new_raw_value: str) -> "ConfigDocument":
        """New document where only the targeted line's value span changes."""
        entry = self._entries.get(key_path)
        if entry is None:
            raise UnknownKey(f"config has no key {key_path!r}")
        lines = self.raw_text.split("\n")
        line = lines[entry.line_no]
        pattern = _FLAT_RE if self.syntax == "flat" else _NESTED_RE
        m = pattern.match(line)
        lines[entry.line_no] = m.group(1) + m.group(2) + m.group(3) + new_raw_value
        return ConfigDocument.parse("\n".join(lines))

    def diff_keys(self, other: "ConfigDocument") -> list[str]:
        """Key paths added, removed, or changed between the two documents."""
        changed = []
        for key in dict.fromkeys(list(self._entries) + list(other._entries)):
            a = self._entries.get(key)
            b = other._entries.get(key)
            if a is None or b is None or a.raw_value.strip() != b.raw_value.strip():
                changed.append(key)
        return changed
