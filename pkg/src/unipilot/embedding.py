"""Text embeddings and cosine similarity over L2-normalized vectors."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import DimensionMismatch, ProviderUnavailable, ZeroVector

_WORD_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def tolist(self) -> list[float]:
        return [float(x) for x in self.values]


def cosine(u: EmbeddingVector, v: EmbeddingVector) -> float:
    """u.v / (|u||v|), clamped to [-1, 1]."""
    if u.dimension != v.dimension:
        raise DimensionMismatch(f"dimensions differ: {u.dimension} vs {v.dimension}")
    nu, nv = u.norm, v.norm
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine undefined for a zero vector")
    value = float(np.dot(u.values, v.values) / (nu * nv))
    return max(-1.0, min(1.0, value))


class EmbeddingProvider(Protocol):
    dimension: int

    @property
    def fingerprint(self) -> str: ...

    def embed(self, text: str) -> EmbeddingVector: ...


class LocalHashEmbedder:
    """Deterministic offline embedder: hashed word n-grams (n = 1..3).

    Each n-gram is hashed (blake2b, unsalted) into one of `dimension` buckets;
    the count vector is L2-normalized. Unigrams keep one- and two-word inputs
    embeddable; trigrams give longer texts separation.
    """

    def __init__(self, dimension: int = 256):
        self.dimension = dimension

    @property
    def fingerprint(self) -> str:
        return f"local-ngram-hash:v1:d={self.dimension}"

    def embed(self, text: str) -> EmbeddingVector:
        if not text.strip():
            raise ZeroVector("cannot embed empty text")
        words = _WORD_RE.findall(text.lower())
        if not words:
            raise ZeroVector("text has no embeddable tokens")
        counts = np.zeros(self.dimension, dtype=np.float64)
        for n in (1, 2, 3):
            for i in range(len(words) - n + 1):
                gram = " ".join(words[i : i + n])
                digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
                counts[int.from_bytes(digest, "big") % self.dimension] += 1.0
        norm = np.linalg.norm(counts)
        return EmbeddingVector(counts / norm)


class RemoteEmbedder:
    """OpenAI-compatible embeddings endpoint; a drop-in for the local embedder."""

    def __init__(self, base_url: str, model: str, dimension: int,
                 api_key: str = "", timeout_s: float = 60.0, transport=None):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.model = model
        self.dimension = dimension
        self.api_key = api_key
        self.timeout_s = timeout_s
        self._client = httpx.Client(transport=transport, timeout=timeout_s)

    @property
    def fingerprint(self) -> str:
        return f"remote:{self.model}:d={self.dimension}"

    def embed(self, text: str) -> EmbeddingVector:
        if not text.strip():
            raise ZeroVector("cannot embed empty text")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._client.post(f"{self.base_url}/embeddings",
                                     json={"model": self.model, "input": text},
                                     headers=headers)
            resp.raise_for_status()
            values = np.asarray(resp.json()["data"][0]["embedding"], dtype=np.float64)
        except Exception as exc:
            raise ProviderUnavailable(f"embedding endpoint failed: {exc}") from exc
        if values.shape[0] != self.dimension:
            raise DimensionMismatch(
                f"endpoint returned d={values.shape[0]}, expected {self.dimension}")
        norm = np.linalg.norm(values)
        if norm == 0.0:
            raise ZeroVector("endpoint returned a zero vector")
        return EmbeddingVector(values / norm)
