"""Acceptance gate: every criterion runs at its stated tolerance and prints
one PASS line; any failure the usual pytest way."""

from __future__ import annotations

import itertools
import json
import math
import random
import time
from pathlib import Path

import numpy as np
import pytest

from unipilot.cli import main as cli_main
from unipilot.embedding import EmbeddingVector, LocalHashEmbedder, cosine
from unipilot.errors import GuardRefusal
from unipilot.explainer import Explanation, StageBriefing
from unipilot.guardline import Guardline, REFUSAL_TEXT
from unipilot.jsonutil import canonical_dumps
from unipilot.pipeline import Engine, SessionRuntime
from unipilot.planning import SearchSpace, validate_search_space
from unipilot.configdoc import ConfigDocument
from unipilot.prompts import TEMPLATE_IDS, PromptLibrary
from unipilot.registry import Category, build_index, select_best, shortlist
from unipilot.session import (
    EXCHANGE_KINDS,
    K_BRIEFING,
    K_EXPLANATION,
    K_GUARDLINE,
    K_USER,
    Stage,
    Status,
    checkpoint_invariant_ok,
    start_session,
)
from unipilot.training import MockExecutor, enumerate_trials, estimate_progress, hpo_loop

from conftest import (
    FIXTURES,
    GOLDENS,
    PETS_QUERY,
    SAFE_VERDICT,
    entry,
    gateway_for,
    make_engine,
    make_engine_config,
    pets_run_script,
)

DATASET = str(FIXTURES / "datasets" / "pets.csv")


def report(name: str):
    print(f"ACCEPTANCE PASS: {name}")


# ---------------------------------------------------------------------------
# Retrieval oracle: 50 cards x 20 queries, 0 mismatches, < 1 s


def test_acceptance_retrieval_oracle(embedder, fixture_cards, fixture_queries):
    started = time.monotonic()
    index = build_index(fixture_cards, Category.Discriminative, embedder)
    cards = {c.model_id: c for c in fixture_cards}
    mismatches = 0
    for query in fixture_queries:
        got = shortlist(index, query, embedder)
        q = embedder.embed(query).values
        scored = []
        for card in fixture_cards:
            v = embedder.embed(card.embed_text).values
            scored.append((card.model_id,
                           float(np.dot(q, v) / (np.linalg.norm(q) * np.linalg.norm(v)))))
        expected = sorted(scored, key=lambda p: (-p[1], p[0]))[:10]
        if [m for m, _ in got.ranked] != [m for m, _ in expected]:
            mismatches += 1
        best = select_best(got, query, cards, embedder)
        members = {m for m, _ in expected}
        best_expected = sorted(((m, s) for m, s in scored if m in members),
                               key=lambda p: (-p[1], p[0]))[0][0]
        if best.model_id != best_expected:
            mismatches += 1
    elapsed = time.monotonic() - started
    assert mismatches == 0
    assert elapsed < 1.0, f"retrieval oracle took {elapsed:.2f}s"
    report(f"retrieval oracle (50 cards x 20 queries, 0 mismatches, {elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# Selection math: exact cosine cases at 1e-9; argmax invariances


def test_acceptance_selection_math(embedder, fixture_cards):
    def vec(*values):
        return EmbeddingVector(np.asarray(values, dtype=np.float64))

    assert abs(cosine(vec(1, 0), vec(1, 0)) - 1.0) <= 1e-9
    assert abs(cosine(vec(1, 0), vec(0, 1)) - 0.0) <= 1e-9
    assert abs(cosine(vec(1, 1), vec(1, 0)) - 1 / math.sqrt(2)) <= 1e-9

    base_index = build_index(fixture_cards, Category.Discriminative, embedder)
    base = shortlist(base_index, "predict prices from tables", embedder)
    score_of = dict(base.ranked)

    class Scaled:
        dimension = embedder.dimension
        fingerprint = "scaled"

        def embed(self, text):
            return EmbeddingVector(embedder.embed(text).values * 3.25)

    scaled = shortlist(build_index(fixture_cards, Category.Discriminative, Scaled()),
                       "predict prices from tables", Scaled())
    assert [m for m, _ in scaled.ranked] == [m for m, _ in base.ranked]

    rng = np.random.default_rng(7)
    rotation = np.linalg.qr(rng.normal(size=(256, 256)))[0]

    class Rotated:
        dimension = embedder.dimension
        fingerprint = "rotated"

        def embed(self, text):
            return EmbeddingVector(rotation @ embedder.embed(text).values)

    rotated = shortlist(build_index(fixture_cards, Category.Discriminative, Rotated()),
                        "predict prices from tables", Rotated())
    for a, b in zip([m for m, _ in base.ranked], [m for m, _ in rotated.ranked]):
        if a != b:
            assert abs(score_of[a] - score_of[b]) < 1e-9
    assert rotated.ranked[0][0] == base.ranked[0][0]
    report("selection math (cosine exact to 1e-9; scaling and rotation invariance)")


# ---------------------------------------------------------------------------
# State machine: 1000 randomized intervention sequences, < 10 s


class _NullStore:
    def append_entry(self, *a, **k): pass
    def write_state(self, *a, **k): pass
    def write_checkpoint(self, *a, **k): pass
    def remove_checkpoint(self, *a, **k): pass


class _QueueProvider:
    name = "queued"

    def __init__(self):
        self.responses = []

    def plan(self, *texts):
        self.responses.extend(texts)

    def complete_once(self, request):
        return self.responses.pop(0)


class _FakeExplainer:
    def explain_result(self, artifacts, query, context=None, context_refs=()):
        return Explanation("StageResult", "ok", tuple(context_refs))

    def explain_error(self, report_, query, context=None):
        return Explanation("Error", report_.message, ())

    def next_stage_briefing(self, completed, upcoming, query):
        return StageBriefing(completed, upcoming, "next")


def _filter_ok(text: str) -> str:
    return json.dumps({"allowed": True, "rewritten": text, "reason": "ok"})


def test_acceptance_state_machine(tmp_path):
    config = make_engine_config(tmp_path, [], run_name="acceptance-sessions")
    engine = Engine(config)
    engine.store = _NullStore()
    handlers = {stage.name: (lambda ctx, s=stage: {f"out_{s.ordinal}": s.ordinal})
                for stage in Stage}
    rng = random.Random(20240817)
    started = time.monotonic()
    for sequence in range(1000):
        session = start_session(f"s-{sequence:04d}", "exercise the machine")
        provider = _QueueProvider()
        runtime = SessionRuntime(engine, session, provider=provider,
                                 handlers=handlers)
        runtime.explainer = _FakeExplainer()
        for _ in range(rng.randint(1, 12)):
            if session.status is not Status.Running:
                break
            candidates = [s for s in Stage
                          if s in session.checkpoints or s is session.current_stage]
            if rng.random() < 0.4 and candidates:
                target = rng.choice(candidates)
                below = {s: canonical_dumps(c.to_json())
                         for s, c in session.checkpoints.items()
                         if s.ordinal < target.ordinal}
                text = f"redo {target.name}"
                provider.plan(_filter_ok(text), target.name)
                runtime.queue_intervention(text)
                runtime.consume_interventions()
                assert session.current_stage is target
                # discards exactly the checkpoints above the target
                assert all(s.ordinal < target.ordinal for s in session.checkpoints)
                for s, blob in below.items():
                    assert canonical_dumps(session.checkpoints[s].to_json()) == blob
            else:
                before = session.current_stage.ordinal
                runtime.run_stage()
                if session.status is Status.Running:
                    assert session.current_stage.ordinal >= before
            assert checkpoint_invariant_ok(session)
    elapsed = time.monotonic() - started
    assert elapsed < 10.0, f"state machine property took {elapsed:.2f}s"
    report(f"state machine (1000 random intervention sequences, {elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# Guardline: termination, refusal paths, transcript gate order


def test_acceptance_guardline(tmp_path):
    library = PromptLibrary()

    def verdict(kind, critique=""):
        return json.dumps({"verdict": kind, "critique": critique})

    # termination within the budget for arbitrary verdict scripts
    for max_rounds in (1, 2, 3, 4):
        entries = []
        for i in range(max_rounds + 1):
            entries.append(entry("output-revise", verdict("revisable", f"r{i}")))
            entries.append(entry("output-revise", f"candidate {i}"))
        calls = []
        guard = Guardline(gateway_for(entries, recorder=lambda *a: calls.append(1)),
                          library, max_rounds=max_rounds)
        with pytest.raises(GuardRefusal) as err:
            guard.revise_until_safe("text")
        assert err.value.message == REFUSAL_TEXT
        assert len(calls) <= 2 * max_rounds + 1

    # forbidden path
    guard = Guardline(gateway_for([entry("output-revise", verdict("forbidden", "bad"))]),
                      library)
    with pytest.raises(GuardRefusal) as err:
        guard.revise_until_safe("text")
    assert err.value.message == REFUSAL_TEXT

    # transcript order: every user message (query, directive, intervention) is
    # filtered before other model calls in its turn; every emission is
    # censored first. The steering run adds an intervention turn.
    from test_pipeline_e2e import retrace_script

    def assert_gate_order(session):
        entries = session.transcript
        user_turns = 0
        for i, e in enumerate(entries):
            if e.kind == K_USER:
                user_turns += 1
                following = [x for x in entries[i + 1:] if x.kind in EXCHANGE_KINDS]
                assert following \
                    and following[0].payload["template_id"] == "input-filter"
            if e.kind in (K_EXPLANATION, K_BRIEFING) and not e.payload.get("refused"):
                previous = [x for x in entries[:i] if x.kind in EXCHANGE_KINDS]
                assert previous[-1].kind == K_GUARDLINE
                assert previous[-1].payload["template_id"] == "output-revise"
        return user_turns

    engine = make_engine(tmp_path, pets_run_script(), run_name="gate-order")
    runtime = engine.new_session(PETS_QUERY, dataset_path=DATASET)
    session = runtime.run_to_completion()
    assert session.status is Status.Completed
    assert assert_gate_order(session) == 1

    steered = make_engine(tmp_path, retrace_script(), run_name="gate-order-steer")
    runtime = steered.new_session(PETS_QUERY, dataset_path=DATASET)
    while runtime.session.current_stage is not Stage.Training \
            and runtime.session.status is Status.Running:
        runtime.run_stage()
    runtime.queue_intervention("use a smaller vision model instead")
    session = runtime.run_to_completion()
    assert session.status is Status.Completed
    assert assert_gate_order(session) == 2  # query turn + intervention turn
    report("guardline (termination, refusal paths, transcript gate order)")


# ---------------------------------------------------------------------------
# Search-space validation: one mutation per validation rule


def test_acceptance_search_space_rules():
    config = ConfigDocument.parse("lr = 0.001\nbatch_size = 32\n")
    assert "original value not in range: lr" in validate_search_space(
        {"lr": [0.01, 0.1, 1.0]}, config)
    assert "fewer than 3 candidates: lr" in validate_search_space(
        {"lr": [0.001, 0.01]}, config)
    assert "unknown parameter: momentum" in validate_search_space(
        {"momentum": [0.8, 0.9, 0.99]}, config)
    ckpt_config = ConfigDocument.parse(
        "checkpoint_identifier = 'run-1'\nweight_loss = 0.5\nlr = 0.001\n")
    violations = validate_search_space({"lr": [0.0001, 0.001, 0.01]}, ckpt_config)
    assert any(v.startswith("only weight_loss permitted") for v in violations)
    assert validate_search_space({"weight_loss": [0.1, 0.5, 1.0]}, ckpt_config) == []
    report("search-space validation (four mutation rules enforced)")


# ---------------------------------------------------------------------------
# Fusion plan: worked example plus 200 random dim lists


def test_acceptance_fusion_plan():
    from unipilot.planning import fusion_skeleton

    plan = fusion_skeleton([("a", 512), ("b", 768), ("c", 64)])
    assert plan.target_dim == 768
    assert len(plan.adapters) == 3
    assert plan.adapters == (("a", 512, 768), ("b", 768, 768), ("c", 64, 768))
    rng = random.Random(99)
    for _ in range(200):
        dims = [rng.randint(1, 4096) for _ in range(rng.randint(2, 9))]
        models = [(f"m{i}", d) for i, d in enumerate(dims)]
        skeleton = fusion_skeleton(models)
        assert skeleton.target_dim == max(dims)
        assert all(out == skeleton.target_dim for _, _, out in skeleton.adapters)
    report("fusion plan (512/768/64 worked example; 200 random dim lists)")


# ---------------------------------------------------------------------------
# HPO oracle: 5 fixture spaces, full grid, published optimum, < 5 s


def test_acceptance_hpo_oracle(fixture_spaces):
    started = time.monotonic()
    mismatches = 0
    for fixture in fixture_spaces:
        space = SearchSpace(params={k: list(v) for k, v in fixture["params"].items()},
                            origin_config=dict(fixture["origin_config"]))
        optimum = fixture["optimum"]
        total = 1
        for candidates in space.params.values():
            total *= len(candidates)
        best, results = hpo_loop(space, budget=total, strategy="grid",
                                 executor=MockExecutor(space, optimum))
        # independent exhaustive evaluation of the published objective
        from unipilot.training import synthetic_objective

        names = sorted(space.params)
        expected, expected_value = None, None
        for combo in itertools.product(*(space.params[n] for n in names)):
            point = dict(zip(names, combo))
            value = synthetic_objective(point, space, optimum)
            if expected_value is None or value > expected_value:
                expected, expected_value = point, value
        if best.assignment != expected:
            mismatches += 1
        assert results[0].assignment == dict(space.origin_config)
    elapsed = time.monotonic() - started
    assert mismatches == 0
    assert elapsed < 5.0, f"hpo oracle took {elapsed:.2f}s"
    report(f"hpo oracle (5 spaces, exhaustive agreement, {elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# ETA bound: |eta_error| <= d * (1-alpha)^(k-1) at every step


def test_acceptance_eta_bound():
    from unipilot.training import MetricPoint

    d = 400
    total = 10
    points = []
    for k in range(1, total + 1):
        points.append(MetricPoint(step=k, value=0.1 * k, wall_ms=k * d))
        estimate = estimate_progress(points, total)
        if k >= 2:
            true_eta = (total - k) * d
            bound = d * (0.7 ** (k - 1))
            assert abs(estimate.eta_ms - true_eta) <= bound + 1e-9, k
    report("eta (EWMA error bound holds at every step)")


# ---------------------------------------------------------------------------
# End-to-end determinism: byte-identical report.json; replay MATCH; < 5 s


def test_acceptance_end_to_end_determinism(tmp_path, capsys):
    started = time.monotonic()
    blobs = []
    config_paths = []
    for name in ("det-a", "det-b"):
        config = make_engine_config(tmp_path, pets_run_script(), run_name=name)
        config_path = tmp_path / name / "config.json"
        config_path.write_text(json.dumps(config.to_json()))
        config_paths.append(config_path)
        for sub in ("discriminative", "generative"):
            assert cli_main(["ingest", "--config", str(config_path),
                             "--fixture", str(FIXTURES / "cards" / sub)]) == 0
        out = tmp_path / name / "out"
        code = cli_main(["run", "--config", str(config_path), "--query", PETS_QUERY,
                         "--dataset", DATASET, "--out", str(out), "--headless",
                         "--budget", "4", "--strategy", "grid", "--seed", "7",
                         "--executor", "mock"])
        assert code == 0
        blobs.append((out / "report.json").read_bytes())
    assert blobs[0] == blobs[1]
    session_dir = next(p for p in (tmp_path / "det-a" / "sessions").iterdir()
                       if p.is_dir())
    capsys.readouterr()
    assert cli_main(["replay", "--config", str(config_paths[0]),
                     str(session_dir)]) == 0
    assert capsys.readouterr().out.strip() == "MATCH"
    elapsed = time.monotonic() - started
    assert elapsed < 5.0, f"end-to-end determinism took {elapsed:.2f}s"
    report(f"end-to-end determinism (byte-identical report.json; replay MATCH; "
           f"{elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# Crash recovery: identical frame sequence after a mid-run service kill


def test_acceptance_crash_recovery(tmp_path):
    from fastapi.testclient import TestClient

    from unipilot.registry import FixtureCardSource
    from unipilot.service import Service, create_app

    def build(run_name):
        config = make_engine_config(tmp_path, pets_run_script(), run_name=run_name)
        service = Service(config)
        service.engine.registry.ingest(
            FixtureCardSource(FIXTURES / "cards" / "discriminative"))
        service.engine.registry.ingest(
            FixtureCardSource(FIXTURES / "cards" / "generative"))
        return config, service

    def wait_done(service, sid, deadline=30):
        limit = time.monotonic() + deadline
        while time.monotonic() < limit:
            if service.runtimes[sid].session.status not in (Status.Running,
                                                            Status.AwaitingUser):
                return
            time.sleep(0.01)
        raise AssertionError("session never finished")

    _, reference_service = build("recovery-ref")
    app = create_app(reference_service.engine.config, reference_service)
    with TestClient(app) as client:
        sid = client.post("/sessions", json={
            "query": PETS_QUERY, "dataset_path": DATASET}).json()["session_id"]
        wait_done(reference_service, sid)
        reference = [e.to_json()
                     for e in reference_service.runtimes[sid].session.transcript]
    reference_service.shutdown()

    crash_config, crash_service = build("recovery-crash")
    app = create_app(crash_config, crash_service)
    with TestClient(app) as client:
        sid2 = client.post("/sessions", json={
            "query": PETS_QUERY, "dataset_path": DATASET}).json()["session_id"]
        limit = time.monotonic() + 30
        while len(crash_service.runtimes[sid2].session.transcript) < 12 \
                and time.monotonic() < limit:
            time.sleep(0.002)
    crash_service.shutdown()  # kill between frames

    resumed_service = Service(crash_config)
    wait_done(resumed_service, sid2)
    resumed = [e.to_json() for e in resumed_service.runtimes[sid2].session.transcript]
    resumed_service.shutdown()
    assert resumed == reference
    report("crash recovery (resumed frame sequence identical)")


# ---------------------------------------------------------------------------
# Prompt goldens: byte-identical renders; placeholder coverage property


def test_acceptance_prompt_goldens():
    library = PromptLibrary()
    bindings = json.loads((GOLDENS / "prompts" / "bindings.json").read_text())
    assert len(library.list_templates()) == 15
    for template_id in TEMPLATE_IDS:
        rendered = library.render(template_id, bindings[template_id])
        golden = (GOLDENS / "prompts" / f"{template_id}.golden.txt").read_text()
        assert rendered == golden, template_id

    from unipilot.errors import MissingPlaceholder, UnknownPlaceholder

    rng = random.Random(5)
    full = bindings["config-modify"]
    for _ in range(200):
        keep = {k: v for k, v in full.items() if rng.random() < 0.8}
        extra = {f"zz_{i}": "x" for i in range(rng.randint(0, 2))}
        candidate = {**keep, **extra}
        exact = set(candidate) == set(full)
        if exact:
            assert library.render("config-modify", candidate)
        else:
            with pytest.raises((MissingPlaceholder, UnknownPlaceholder)):
                library.render("config-modify", candidate)
    report("prompt goldens (15 byte-identical renders; coverage property)")
