"""Task understanding: category classification, column modalities, task type."""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .embedding import EmbeddingProvider, cosine
from .errors import ConfigError, PathNotFound, SchemaViolation
from .gateway import CompletionRequest, LlmGateway
from .prompts import PromptLibrary
from .structured import MODALITIES, SCHEMAS, complete_structured

PREVIEW_ROW_LIMIT = 20
IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp", ".gif", ".webp")


class TaskCategory(enum.Enum):
    Discriminative = "Discriminative"
    GenerativeDiffusion = "GenerativeDiffusion"
    GenerativeLLM = "GenerativeLLM"

    @property
    def is_generative(self) -> bool:
        return self is not TaskCategory.Discriminative


@dataclass(frozen=True)
class DatasetPreview:
    """Headers plus at most the first 20 rows; all a prompt ever sees."""

    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]
    source: str = ""

    def render(self) -> str:
        lines = ["columns: " + ", ".join(self.columns)]
        for row in self.rows:
            lines.append(" | ".join(row))
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {"columns": list(self.columns),
                "rows": [list(r) for r in self.rows],
                "source": self.source}

    @classmethod
    def from_json(cls, data: dict) -> "DatasetPreview":
        return cls(columns=tuple(data["columns"]),
                   rows=tuple(tuple(r) for r in data["rows"]),
                   source=data.get("source", ""))


def read_preview(path: str | Path, max_rows: int = PREVIEW_ROW_LIMIT) -> DatasetPreview:
    """CSV/TSV file (header row required) or a directory of images."""
    p = Path(path)
    if p.is_dir():
        files = sorted(
            f.name for f in p.iterdir()
            if f.is_file() and f.suffix.lower() in IMAGE_EXTENSIONS
        )
        if not files:
            raise PathNotFound(f"no image files under {p}")
        rows = tuple((name,) for name in files[:max_rows])
        return DatasetPreview(columns=("image_path",), rows=rows, source=str(p))
    if not p.is_file():
        raise PathNotFound(f"dataset not found: {p}")
    delimiter = "\t" if p.suffix.lower() in (".tsv", ".tab") else ","
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"dataset {p} is empty (header row required)") from None
        rows = []
        for row in reader:
            rows.append(tuple(cell.strip() for cell in row))
            if len(rows) >= max_rows:
                break
    return DatasetPreview(columns=tuple(h.strip() for h in header),
                          rows=tuple(rows), source=str(p))


@dataclass(frozen=True)
class ModalityMap:
    columns: dict[str, str]
    label_column: str | None = None

    def __post_init__(self):
        for col, modality in self.columns.items():
            if modality not in MODALITIES:
                raise SchemaViolation(f"unknown modality {modality!r}", path=f"$.{col}")
        labels = [c for c, m in self.columns.items() if m == "label"]
        if len(labels) > 1:
            raise SchemaViolation(f"multiple label columns: {sorted(labels)}", path="$")
        if self.label_column is not None and self.columns.get(self.label_column) != "label":
            raise SchemaViolation(
                f"label_column {self.label_column!r} is not mapped to 'label'", path="$")

    @property
    def modalities_present(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.columns.values())))

    def canonical_text(self) -> str:
        """Columns sorted by name, "name:modality", joined by "; "."""
        return "; ".join(f"{c}:{self.columns[c]}" for c in sorted(self.columns))

    def to_json(self) -> dict:
        return {"columns": dict(sorted(self.columns.items())),
                "label_column": self.label_column}

    @classmethod
    def from_json(cls, data: dict) -> "ModalityMap":
        return cls(columns=dict(data["columns"]), label_column=data.get("label_column"))


@dataclass(frozen=True)
class TaskTypeEntry:
    id: str
    description: str

    @property
    def embed_text(self) -> str:
        return f"{self.id}: {self.description}"


@dataclass(frozen=True)
class TaskTypeCatalog:
    entries: tuple[TaskTypeEntry, ...]

    def __post_init__(self):
        if not self.entries:
            raise ConfigError("task-type catalog must be non-empty")
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ConfigError("task-type ids must be unique")

    @classmethod
    def load(cls, path: str | Path | None = None) -> "TaskTypeCatalog":
        if path is not None:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        else:
            data = json.loads(
                resources.files("unipilot").joinpath("data/task_types.json")
                .read_text(encoding="utf-8"))
        return cls(tuple(TaskTypeEntry(e["id"], e["description"]) for e in data["entries"]))

    def ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.entries)


def classify_category(query: str, gateway: LlmGateway, library: PromptLibrary,
                      structured_attempts: int = 2) -> TaskCategory:
    """Three-way task-category call; one corrective re-ask on an unknown label."""
    prompt = library.render("task-category", {})
    request = CompletionRequest.build("task-category", prompt, user=query)
    label = complete_structured(gateway, request, SCHEMAS["category-label"],
                                max_attempts=structured_attempts)
    return TaskCategory(label)


def infer_modalities(preview: DatasetPreview, query: str, gateway: LlmGateway,
                     library: PromptLibrary, structured_attempts: int = 2) -> ModalityMap:
    """Column→modality map covering exactly the preview columns."""
    if len(preview.rows) > PREVIEW_ROW_LIMIT:
        raise ConfigError(f"preview exceeds {PREVIEW_ROW_LIMIT} rows")
    prompt = library.render("modality-inference",
                            {"context": query, "dataset": preview.render()})
    request = CompletionRequest.build("modality-inference", prompt)

    expected = set(preview.columns)

    def check_coverage(mapping: dict) -> dict:
        missing = sorted(expected - mapping.keys())
        extra = sorted(mapping.keys() - expected)
        if missing:
            raise SchemaViolation(f"column not analyzed: {missing[0]}",
                                  path=f"$.{missing[0]}")
        if extra:
            raise SchemaViolation(f"unknown column in output: {extra[0]}",
                                  path=f"$.{extra[0]}")
        return mapping

    # coverage failures join schema failures in the corrective re-ask loop
    from .structured import SchemaRef, parse_structured
    base = SCHEMAS["modality-map"]
    schema = SchemaRef("modality-map", "json",
                       lambda value: check_coverage(base.validate(value)))
    mapping = complete_structured(gateway, request, schema,
                                  max_attempts=structured_attempts)
    labels = [c for c, m in mapping.items() if m == "label"]
    return ModalityMap(columns=dict(mapping), label_column=labels[0] if labels else None)


def resolve_task_type(query: str, category: TaskCategory, modalities: ModalityMap,
                      catalog: TaskTypeCatalog, embedder: EmbeddingProvider) -> str:
    """Embedding argmax over the catalog; ties broken by ascending id."""
    probe = " || ".join([" ".join(query.split()), category.value,
                         modalities.canonical_text()])
    qvec = embedder.embed(probe)
    best_id, best_score = None, None
    for entry in sorted(catalog.entries, key=lambda e: e.id):
        score = cosine(qvec, embedder.embed(entry.embed_text))
        if best_score is None or score > best_score:
            best_id, best_score = entry.id, score
    return best_id
