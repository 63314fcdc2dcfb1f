from __future__ import annotations

import json
from pathlib import Path

import pytest

from unipilot.config import EngineConfig
from unipilot.embedding import LocalHashEmbedder
from unipilot.gateway import LlmGateway, ScriptEntry, ScriptedResponder
from unipilot.pipeline import Engine
from unipilot.registry import Category, FixtureCardSource, ModelCard, ModelRegistry

FIXTURES = Path(__file__).parent / "fixtures"
GOLDENS = Path(__file__).parent / "goldens"

PETS_QUERY = "predict pet popularity from images and tabular features"
SAFE_VERDICT = json.dumps({"verdict": "safe", "critique": ""})


def entry(template_id: str, response, contains: str | None = None) -> dict:
    if not isinstance(response, str):
        response = json.dumps(response)
    match = {"template_id": template_id}
    if contains:
        match["contains"] = contains
    return {"match": match, "response": response}


def scripted(entries: list[dict], strict: bool = False) -> ScriptedResponder:
    return ScriptedResponder(
        [ScriptEntry(template_id=e["match"]["template_id"],
                     contains=e["match"].get("contains"),
                     response=e["response"]) for e in entries],
        strict=strict,
    )


def gateway_for(entries: list[dict], strict: bool = False,
                recorder=None) -> LlmGateway:
    return LlmGateway(scripted(entries, strict=strict), recorder=recorder,
                      sleeper=lambda s: None)


def pets_run_script(query: str = PETS_QUERY) -> list[dict]:
    """Scripted responses for one full headless discriminative run."""
    return [
        entry("input-filter", {"allowed": True, "rewritten": query,
                               "reason": "benign machine learning request"}),
        entry("explainer", "The task intake recorded your goal and dataset preview."),
        entry("output-revise", SAFE_VERDICT),
        entry("next-stage", "Intake is complete; task analysis will infer the "
                            "category and the column modalities."),
        entry("output-revise", SAFE_VERDICT),
        entry("task-category", "discriminative"),
        entry("modality-inference", {"image_path": "image", "price": "numerical",
                                     "sold": "label"}),
        entry("explainer", "The task is discriminative with image, numerical, "
                           "and label columns."),
        entry("output-revise", SAFE_VERDICT),
        entry("next-stage", "Model selection will retrieve candidates next."),
        entry("output-revise", SAFE_VERDICT),
        entry("explainer", "The selected model matches the mixed image and "
                           "tabular inputs."),
        entry("output-revise", SAFE_VERDICT),
        entry("next-stage", "Preprocessing will plan per-modality processors."),
        entry("output-revise", SAFE_VERDICT),
        entry("preprocess-codegen", {
            "data_processor_codes": (
                "def processor(modality):\n"
                "    image_processor = make_image()\n"
                "    numerical_processor = make_numerical()\n"
                "    label_processor = make_label()\n"
                "    return [image_processor, numerical_processor, label_processor]"),
            "reason": "image, numerical, and label columns are present"}),
        entry("explainer", "Processors cover every modality present."),
        entry("output-revise", SAFE_VERDICT),
        entry("next-stage", "Configuration will derive the search space."),
        entry("output-revise", SAFE_VERDICT),
        entry("hyperparam-description", {
            "lr": "step size used by the optimizer when updating weights",
            "batch_size": "how many rows are processed per optimization step",
            "epochs": "how many passes over the training data are made",
            "weight_decay": "strength of the parameter shrinkage regularizer"}),
        entry("hyperparam-search-space", {
            "lr": [0.0001, 0.001, 0.01], "batch_size": [16, 32, 64],
            "epochs": [5, 10, 20], "weight_decay": [0.0, 0.0001, 0.001]}),
        entry("explainer", "Search ranges anchor at the original configuration."),
        entry("output-revise", SAFE_VERDICT),
        entry("next-stage", "Training will search the space with the executor."),
        entry("output-revise", SAFE_VERDICT),
        entry("explainer", "The best trial kept the strongest validation score."),
        entry("output-revise", SAFE_VERDICT),
        entry("next-stage", "The report stage assembles the final summary."),
        entry("output-revise", SAFE_VERDICT),
        entry("explainer", "The final report lists the selected model and best trial."),
        entry("output-revise", SAFE_VERDICT),
    ]


def write_script(path: Path, entries: list[dict]) -> Path:
    path.write_text(json.dumps(entries, indent=2), encoding="utf-8")
    return path


def make_engine_config(tmp_path: Path, script_entries: list[dict], *,
                       budget: int = 4, strategy: str = "grid", seed: int = 7,
                       interactive: bool = False, run_name: str = "run",
                       **overrides) -> EngineConfig:
    base = tmp_path / run_name
    base.mkdir(parents=True, exist_ok=True)
    script_path = write_script(base / "script.json", script_entries)
    values = dict(
        store_dir=str(base / "sessions"),
        cards_dir=str(base / "cards"),
        chat_provider="scripted",
        script_path=str(script_path),
        budget=budget, strategy=strategy, seed=seed,
        executor="mock",
        mock_optimum={"lr": 0.01, "batch_size": 64},
        interactive=interactive,
    )
    values.update(overrides)
    return EngineConfig(**values)


def make_engine(tmp_path: Path, script_entries: list[dict], **kwargs) -> Engine:
    config = make_engine_config(tmp_path, script_entries, **kwargs)
    engine = Engine(config)
    engine.registry.ingest(FixtureCardSource(FIXTURES / "cards" / "discriminative"))
    engine.registry.ingest(FixtureCardSource(FIXTURES / "cards" / "generative"))
    return engine


@pytest.fixture
def embedder() -> LocalHashEmbedder:
    return LocalHashEmbedder()


@pytest.fixture(scope="session")
def fixture_cards() -> list[ModelCard]:
    return FixtureCardSource(FIXTURES / "cards" / "discriminative").fetch()


@pytest.fixture(scope="session")
def generative_cards() -> list[ModelCard]:
    return FixtureCardSource(FIXTURES / "cards" / "generative").fetch()


@pytest.fixture(scope="session")
def fixture_queries() -> list[str]:
    return json.loads((FIXTURES / "queries.json").read_text())


@pytest.fixture(scope="session")
def fixture_spaces() -> list[dict]:
    return json.loads((FIXTURES / "spaces" / "spaces.json").read_text())


@pytest.fixture
def registry(tmp_path, fixture_cards) -> ModelRegistry:
    reg = ModelRegistry(tmp_path / "cards")
    reg.ingest(FixtureCardSource(FIXTURES / "cards" / "discriminative"))
    reg.ingest(FixtureCardSource(FIXTURES / "cards" / "generative"))
    return reg
