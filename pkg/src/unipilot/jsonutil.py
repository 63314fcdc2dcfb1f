"""Canonical JSON encoding shared by checkpoints, transcripts, and reports."""

from __future__ import annotations

import hashlib
import json


def canonical_dumps(value) -> str:
    """Serialize with sorted keys and no whitespace so equal values byte-match."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def canonical_bytes(value) -> bytes:
    return canonical_dumps(value).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def value_digest(value) -> str:
    return sha256_hex(canonical_bytes(value))
