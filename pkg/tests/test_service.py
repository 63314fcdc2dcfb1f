from __future__ import annotations

import json
import time

import pytest
from fastapi.testclient import TestClient

from unipilot.pipeline import Engine
from unipilot.registry import FixtureCardSource
from unipilot.service import Service, create_app
from unipilot.session import Status

from conftest import (
    FIXTURES,
    PETS_QUERY,
    SAFE_VERDICT,
    entry,
    make_engine_config,
    pets_run_script,
)

DATASET = str(FIXTURES / "datasets" / "pets.csv")
DEADLINE_S = 30


def make_service(tmp_path, script=None, run_name="svc", **overrides) -> Service:
    config = make_engine_config(tmp_path, script or pets_run_script(),
                                run_name=run_name, **overrides)
    service = Service(config)
    service.engine.registry.ingest(
        FixtureCardSource(FIXTURES / "cards" / "discriminative"))
    service.engine.registry.ingest(
        FixtureCardSource(FIXTURES / "cards" / "generative"))
    return service


def wait_for(predicate, deadline_s=DEADLINE_S, message="condition"):
    start = time.monotonic()
    while time.monotonic() - start < deadline_s:
        if predicate():
            return
        time.sleep(0.01)
    raise AssertionError(f"timed out waiting for {message}")


def wait_terminal(service, session_id):
    wait_for(lambda: service.runtimes[session_id].session.status
             not in (Status.Running, Status.AwaitingUser),
             message="session to finish")


def read_frames(client, session_id, since=0):
    frames = []
    with client.stream("GET", f"/sessions/{session_id}/events",
                       params={"since": since}) as response:
        assert response.status_code == 200
        for line in response.iter_lines():
            if line.startswith("data: "):
                frames.append(json.loads(line[len("data: "):]))
            if line.startswith("event: end"):
                break
    return [f for f in frames if "ordinal" in f]


def test_create_session_and_finish(tmp_path):
    service = make_service(tmp_path)
    app = create_app(service.engine.config, service)
    with TestClient(app) as client:
        created = client.post("/sessions", json={"query": PETS_QUERY,
                                                 "dataset_path": DATASET})
        assert created.status_code == 201
        sid = created.json()["session_id"]
        wait_terminal(service, sid)
        summary = client.get(f"/sessions/{sid}").json()
        assert summary["status"] == "Completed"
        assert summary["current_stage"] == "Report"
    service.shutdown()


def test_empty_query_400(tmp_path):
    service = make_service(tmp_path, run_name="empty")
    app = create_app(service.engine.config, service)
    with TestClient(app) as client:
        assert client.post("/sessions", json={"query": "  "}).status_code == 400
    service.shutdown()


def test_filter_rejection_422(tmp_path):
    script = [entry("input-filter", {"allowed": False, "rewritten": "",
                                     "reason": "off-topic request"})]
    service = make_service(tmp_path, script=script, run_name="rejected")
    app = create_app(service.engine.config, service)
    with TestClient(app) as client:
        response = client.post("/sessions", json={"query": "best soccer player"})
        assert response.status_code == 422
        body = response.json()
        assert body["detail"] == "GuardRefusal"
        assert body["reason"] == "off-topic request"
    service.shutdown()


def test_unknown_session_404(tmp_path):
    service = make_service(tmp_path, run_name="nf")
    app = create_app(service.engine.config, service)
    with TestClient(app) as client:
        assert client.get("/sessions/s-9999").status_code == 404
        assert client.post("/sessions/s-9999/messages",
                           json={"text": "x"}).status_code == 404
        assert client.get("/sessions/s-9999/events").status_code == 404
    service.shutdown()


def test_message_to_completed_session_409(tmp_path):
    service = make_service(tmp_path, run_name="done")
    app = create_app(service.engine.config, service)
    with TestClient(app) as client:
        sid = client.post("/sessions", json={
            "query": PETS_QUERY, "dataset_path": DATASET}).json()["session_id"]
        wait_terminal(service, sid)
        response = client.post(f"/sessions/{sid}/messages", json={"text": "more"})
        assert response.status_code == 409
    service.shutdown()


def test_directive_routing_in_interactive_mode(tmp_path):
    # each directive is itself filtered, so the script carries six verdicts
    directive_filters = [
        entry("input-filter", {"allowed": True, "rewritten": "carry on",
                               "reason": "benign directive"})
        for _ in range(6)
    ]
    service = make_service(tmp_path, script=pets_run_script() + directive_filters,
                           run_name="inter", interactive=True)
    app = create_app(service.engine.config, service)
    with TestClient(app) as client:
        sid = client.post("/sessions", json={
            "query": PETS_QUERY, "dataset_path": DATASET}).json()["session_id"]
        runtime = service.runtimes[sid]
        for _ in range(7):
            wait_for(lambda: runtime.session.status is not Status.Running,
                     message="stage boundary")
            if runtime.session.status is not Status.AwaitingUser:
                break
            routed = client.post(f"/sessions/{sid}/messages",
                                 json={"text": "carry on"})
            assert routed.status_code == 202
            assert routed.json()["routed"] == "directive"
        wait_terminal(service, sid)
        assert runtime.session.status is Status.Completed
    service.shutdown()


def test_event_stream_replays_full_transcript(tmp_path):
    service = make_service(tmp_path, run_name="stream")
    app = create_app(service.engine.config, service)
    with TestClient(app) as client:
        sid = client.post("/sessions", json={
            "query": PETS_QUERY, "dataset_path": DATASET}).json()["session_id"]
        wait_terminal(service, sid)
        frames = read_frames(client, sid, since=0)
        transcript = service.runtimes[sid].session.transcript
        assert [f["ordinal"] for f in frames] == list(range(1, len(transcript) + 1))
    service.shutdown()


def test_event_stream_resume_from_cursor(tmp_path):
    service = make_service(tmp_path, run_name="resume")
    app = create_app(service.engine.config, service)
    with TestClient(app) as client:
        sid = client.post("/sessions", json={
            "query": PETS_QUERY, "dataset_path": DATASET}).json()["session_id"]
        wait_terminal(service, sid)
        frames = read_frames(client, sid, since=10)
        assert frames[0]["ordinal"] == 11
        total = len(service.runtimes[sid].session.transcript)
        assert [f["ordinal"] for f in frames] == list(range(11, total + 1))
    service.shutdown()


def test_abort_trial_mid_flight(tmp_path):
    # a huge budget keeps Training busy long enough to abort trial 1
    service = make_service(tmp_path, run_name="abort", budget=12,
                           mock_step_sleep_s=0.01)
    app = create_app(service.engine.config, service)
    with TestClient(app) as client:
        sid = client.post("/sessions", json={
            "query": PETS_QUERY, "dataset_path": DATASET}).json()["session_id"]
        runtime = service.runtimes[sid]
        wait_for(lambda: runtime.trial_states.get(6) == "running"
                 or runtime.session.status not in (Status.Running,),
                 message="trial 6 to start")
        if runtime.trial_states.get(6) == "running":
            response = client.post(f"/sessions/{sid}/trials/6/abort")
            assert response.status_code == 202
        wait_terminal(service, sid)
        history = runtime.session.artifacts["trial_history"]
        aborted = [t for t in history if t["status"] == "Aborted"]
        # the trial either aborted mid-flight or had already finished
        statuses = {t["trial_id"]: t["status"] for t in history}
        assert statuses[6] in ("Aborted", "Finished")
        best = runtime.session.artifacts["best_trial"]
        assert best["status"] == "Finished"
        assert all(best["trial_id"] != t["trial_id"] for t in aborted)
    service.shutdown()


def test_abort_finished_trial_409(tmp_path):
    service = make_service(tmp_path, run_name="abort409")
    app = create_app(service.engine.config, service)
    with TestClient(app) as client:
        sid = client.post("/sessions", json={
            "query": PETS_QUERY, "dataset_path": DATASET}).json()["session_id"]
        wait_terminal(service, sid)
        assert client.post(f"/sessions/{sid}/trials/0/abort").status_code == 409
        assert client.post(f"/sessions/{sid}/trials/99/abort").status_code == 404
    service.shutdown()


def test_intervention_during_training_via_api(tmp_path):
    from test_pipeline_e2e import retrace_script

    service = make_service(tmp_path, script=retrace_script(), run_name="steer",
                           budget=8, mock_step_sleep_s=0.01)
    app = create_app(service.engine.config, service)
    with TestClient(app) as client:
        sid = client.post("/sessions", json={
            "query": PETS_QUERY, "dataset_path": DATASET}).json()["session_id"]
        runtime = service.runtimes[sid]
        wait_for(lambda: runtime.session.current_stage.name == "Training"
                 and runtime.trial_states.get(1) == "running",
                 message="training underway")
        routed = client.post(f"/sessions/{sid}/messages",
                             json={"text": "use a smaller vision model instead"})
        assert routed.status_code == 202
        assert routed.json()["routed"] == "intervention"
        wait_for(lambda: any(e.kind == "Retrace"
                             for e in runtime.session.transcript),
                 message="retrace to appear")
        retrace = next(e for e in runtime.session.transcript if e.kind == "Retrace")
        assert retrace.payload["target"] == "ModelSelection"
        wait_terminal(service, sid)
        assert runtime.session.status is Status.Completed
    service.shutdown()


def test_list_and_delete_sessions(tmp_path):
    service = make_service(tmp_path, run_name="listing")
    app = create_app(service.engine.config, service)
    with TestClient(app) as client:
        sid = client.post("/sessions", json={
            "query": PETS_QUERY, "dataset_path": DATASET}).json()["session_id"]
        wait_terminal(service, sid)
        listed = client.get("/sessions").json()
        assert [s["session_id"] for s in listed] == [sid]
        transcript = client.get(f"/sessions/{sid}/transcript").json()
        assert transcript["entries"][0]["kind"] == "UserMessage"
        assert client.delete(f"/sessions/{sid}").status_code == 204
        assert client.get(f"/sessions/{sid}").status_code == 404
    service.shutdown()


def test_crash_recovery_identical_frame_sequence(tmp_path):
    # uninterrupted reference run
    ref_service = make_service(tmp_path, run_name="ref")
    ref_app = create_app(ref_service.engine.config, ref_service)
    with TestClient(ref_app) as client:
        sid = client.post("/sessions", json={
            "query": PETS_QUERY, "dataset_path": DATASET}).json()["session_id"]
        wait_terminal(ref_service, sid)
        reference = [e.to_json() for e in ref_service.runtimes[sid].session.transcript]
    ref_service.shutdown()

    # interrupted run on a separate store: stop the worker mid-run
    service_a = make_service(tmp_path, run_name="crash")
    app_a = create_app(service_a.engine.config, service_a)
    with TestClient(app_a) as client:
        sid2 = client.post("/sessions", json={
            "query": PETS_QUERY, "dataset_path": DATASET}).json()["session_id"]
        runtime = service_a.runtimes[sid2]
        wait_for(lambda: len(runtime.session.transcript) >= 12,
                 message="some frames before the crash")
    service_a.shutdown()  # cooperative kill between frames
    crashed_at = len(service_a.runtimes[sid2].session.transcript)

    # resume from persistence in a fresh service over the same store
    service_b = Service(service_a.engine.config)
    assert sid2 in service_b.runtimes
    wait_terminal(service_b, sid2)
    resumed = [e.to_json() for e in service_b.runtimes[sid2].session.transcript]
    service_b.shutdown()

    assert sid2 == sid  # same sequential id on equal stores
    assert resumed == reference
    assert crashed_at <= len(resumed)
