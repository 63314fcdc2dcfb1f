"""Model-card ingestion, category-partitioned vector indexes, and selection.

Retrieval is an exact scan: corpora are small and the ranking contract
(cosine descending, ties by ascending model id) must be reproducible.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

from .embedding import EmbeddingProvider, EmbeddingVector, cosine
from .errors import (
    CategoryMismatch,
    ConfigError,
    EmptyCorpus,
    PathNotFound,
    SourceUnavailable,
)
from .jsonutil import sha256_hex, value_digest

SHORTLIST_K = 10
CARD_TEXT_EMBED_LIMIT = 2000


class Category(enum.Enum):
    Generative = "Generative"
    Discriminative = "Discriminative"


class CardSourceKind(enum.Enum):
    Hub = "Hub"
    Fixture = "Fixture"


@dataclass(frozen=True)
class ModelCard:
    model_id: str
    category: Category
    task_tags: tuple[str, ...]
    card_text: str
    source: CardSourceKind = CardSourceKind.Fixture
    config_text: str = ""  # trainer config shipped with the card, if any

    def __post_init__(self):
        if not self.card_text:
            raise ConfigError(f"card {self.model_id!r} has empty card_text")

    @property
    def embed_text(self) -> str:
        """Text actually embedded: id, tags, and the card body head."""
        tags = " ".join(sorted(self.task_tags))
        return f"{self.model_id} {tags} {self.card_text[:CARD_TEXT_EMBED_LIMIT]}"

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "category": self.category.value,
            "task_tags": sorted(self.task_tags),
            "card_text": self.card_text,
            "config_text": self.config_text,
        }

    @classmethod
    def from_json(cls, data: dict, source: CardSourceKind = CardSourceKind.Fixture) -> "ModelCard":
        return cls(
            model_id=data["model_id"],
            category=Category(data["category"]),
            task_tags=tuple(sorted(data.get("task_tags", []))),
            card_text=data["card_text"],
            source=source,
            config_text=data.get("config_text", ""),
        )


@dataclass(frozen=True)
class VectorIndex:
    category: Category
    entries: tuple[tuple[str, EmbeddingVector], ...]
    dimension: int
    embedder_fingerprint: str

    @property
    def fingerprint(self) -> str:
        head = self.embedder_fingerprint.encode("utf-8")
        body = b"".join(
            mid.encode("utf-8") + vec.values.tobytes() for mid, vec in self.entries
        )
        return sha256_hex(head + b"\x00" + body)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class Shortlist:
    ranked: tuple[tuple[str, float], ...]
    k: int = SHORTLIST_K

    @property
    def model_ids(self) -> tuple[str, ...]:
        return tuple(mid for mid, _ in self.ranked)

    def to_json(self) -> dict:
        return {"k": self.k, "ranked": [[m, s] for m, s in self.ranked]}


@dataclass(frozen=True)
class SelectedModel:
    model_id: str
    score: float
    card: ModelCard

    def to_json(self) -> dict:
        return {"model_id": self.model_id, "score": self.score,
                "card": self.card.to_json()}


def build_index(cards: list[ModelCard], category: Category,
                embedder: EmbeddingProvider) -> VectorIndex:
    if not cards:
        raise EmptyCorpus("cannot build an index from zero cards")
    for card in cards:
        if card.category is not category:
            raise CategoryMismatch(
                f"card {card.model_id!r} is {card.category.value}, index is {category.value}")
    entries = tuple(
        (card.model_id, embedder.embed(card.embed_text))
        for card in sorted(cards, key=lambda c: c.model_id)
    )
    return VectorIndex(category=category, entries=entries,
                       dimension=embedder.dimension,
                       embedder_fingerprint=embedder.fingerprint)


def shortlist(index: VectorIndex, task_text: str, embedder: EmbeddingProvider,
              k: int = SHORTLIST_K) -> Shortlist:
    """Top-k by cosine against the task text; ties by ascending model id."""
    if len(index) == 0:
        raise EmptyCorpus("index is empty")
    query = embedder.embed(task_text)
    scored = [(mid, cosine(query, vec)) for mid, vec in index.entries]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return Shortlist(ranked=tuple(scored[:k]), k=k)


def select_best(candidates: Shortlist, query: str, cards: dict[str, ModelCard],
                embedder: EmbeddingProvider) -> SelectedModel:
    """Argmax of cosine(query, card text) over the shortlist members only."""
    if not candidates.ranked:
        raise EmptyCorpus("shortlist is empty")
    qvec = embedder.embed(query)
    best_id, best_score = None, None
    for model_id in sorted(candidates.model_ids):
        card = cards[model_id]
        score = cosine(qvec, embedder.embed(card.embed_text))
        if best_score is None or score > best_score:
            best_id, best_score = model_id, score
    return SelectedModel(model_id=best_id, score=best_score, card=cards[best_id])


def _cache_name(model_id: str) -> str:
    return model_id.replace("/", "__") + ".json"


class FixtureCardSource:
    """Reads card JSON files from a committed fixture directory."""

    kind = CardSourceKind.Fixture

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def fetch(self) -> list[ModelCard]:
        if not self.path.is_dir():
            raise PathNotFound(f"fixture card directory not found: {self.path}")
        cards = []
        for file in sorted(self.path.rglob("*.json")):
            cards.append(ModelCard.from_json(
                json.loads(file.read_text(encoding="utf-8")), CardSourceKind.Fixture))
        return cards


class HubCardSource:
    """Model-hub REST endpoint listing cards, optionally filtered by task tag."""

    kind = CardSourceKind.Hub

    def __init__(self, base_url: str, task_tag: str | None = None,
                 timeout_s: float = 30.0, transport=None):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.task_tag = task_tag
        self._client = httpx.Client(transport=transport, timeout=timeout_s)

    def fetch(self) -> list[ModelCard]:
        params = {"tag": self.task_tag} if self.task_tag else {}
        try:
            resp = self._client.get(f"{self.base_url}/models", params=params)
            resp.raise_for_status()
            listing = resp.json()
        except Exception as exc:
            raise SourceUnavailable(f"model hub unreachable: {exc}") from exc
        return [ModelCard.from_json(item, CardSourceKind.Hub) for item in listing]


class ModelRegistry:
    """Local card cache (one JSON per card, per category) plus index builds."""

    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)
        self._cards: dict[str, ModelCard] = {}
        self._load_cache()

    def _load_cache(self) -> None:
        for file in sorted(self.cache_dir.glob("*/*.json")):
            record = json.loads(file.read_text(encoding="utf-8"))
            card = ModelCard.from_json(record["card"],
                                       CardSourceKind(record.get("source", "Fixture")))
            self._cards[card.model_id] = card

    @property
    def cards(self) -> dict[str, ModelCard]:
        return dict(self._cards)

    def cards_in(self, category: Category) -> list[ModelCard]:
        return [c for c in self._cards.values() if c.category is category]

    def ingest(self, source) -> int:
        """Cache every fetched card; returns how many were new or changed."""
        import time

        fetched = source.fetch()
        changed = 0
        now = int(time.time() * 1000)  # cache metadata, not session state
        for card in fetched:
            existing = self._cards.get(card.model_id)
            if existing is not None and existing.to_json() == card.to_json():
                continue
            changed += 1
            self._cards[card.model_id] = card
            target = self.cache_dir / card.category.value.lower() / _cache_name(card.model_id)
            target.parent.mkdir(parents=True, exist_ok=True)
            record = {
                "card": card.to_json(),
                "source": source.kind.value,
                "fetched_at": now,
                "etag": value_digest(card.to_json()),
            }
            target.write_text(json.dumps(record, indent=2, sort_keys=True),
                              encoding="utf-8")
        return changed

    def build_index(self, category: Category, embedder: EmbeddingProvider) -> VectorIndex:
        return build_index(self.cards_in(category), category, embedder)
