from __future__ import annotations

import json

import pytest

from unipilot.errors import ErrorReport
from unipilot.explainer import Explainer, StageBriefing
from unipilot.guardline import Guardline, REFUSAL_TEXT
from unipilot.prompts import PromptLibrary
from unipilot.session import Stage

from conftest import SAFE_VERDICT, entry, gateway_for

LIBRARY = PromptLibrary()


def explainer_for(entries) -> Explainer:
    gw = gateway_for(entries)
    return Explainer(gw, Guardline(gw, LIBRARY), LIBRARY)


def test_explain_result_references_context():
    exp = explainer_for([
        entry("explainer", "The fusion model suits image plus tabular inputs."),
        entry("output-revise", SAFE_VERDICT),
    ])
    explanation = exp.explain_result(
        {"selected_model": {"model_id": "m", "card_text": "c" * 3000}},
        query="predict pet popularity",
        context={"modality_map": {"img": "image"}},
        context_refs=("selected_model", "modality_map"))
    assert explanation.subject_kind == "StageResult"
    assert "fusion model" in explanation.text
    assert explanation.context_refs == ("selected_model", "modality_map")
    assert not explanation.refused


def test_explain_result_truncates_card_text_in_prompt():
    captured = []
    gw = gateway_for([
        entry("explainer", "fine"),
        entry("output-revise", SAFE_VERDICT),
    ], recorder=lambda tid, prompt, raw, ms: captured.append((tid, prompt)))
    exp = Explainer(gw, Guardline(gw, LIBRARY), LIBRARY)
    exp.explain_result({"card_text": "x" * 5000}, "q")
    prompt = next(p for t, p in captured if t == "explainer")
    assert "x" * 2001 not in prompt
    assert "x" * 2000 in prompt


def test_explain_result_forbidden_yields_refusal_text():
    exp = explainer_for([
        entry("explainer", "something the judge hates"),
        entry("output-revise", json.dumps({"verdict": "forbidden",
                                           "critique": "harmful"})),
    ])
    explanation = exp.explain_result({"a": 1}, "q")
    assert explanation.text == REFUSAL_TEXT
    assert explanation.refused


def test_explain_error_has_causes_and_resolutions():
    exp = explainer_for([
        entry("error-explainer", json.dumps({
            "summary": "the proposed search space was rejected",
            "causes": ["the range left out the original value"],
            "resolutions": ["ask for a range that includes the original value"]})),
        entry("output-revise", SAFE_VERDICT),
    ])
    report = ErrorReport("Configuration", "SPACE_INVALID",
                         "original value not in range: lr")
    explanation = exp.explain_error(report, "train a model")
    assert "Probable causes:" in explanation.text
    assert "Potential resolutions:" in explanation.text
    assert explanation.subject_kind == "Error"


def test_explain_error_falls_back_to_raw_message():
    exp = explainer_for([
        entry("error-explainer", "not json"),
        entry("error-explainer", "still not json"),
    ])
    report = ErrorReport("Training", "EXECUTOR_FAILURE", "executor exited with 3")
    explanation = exp.explain_error(report, "q")
    assert explanation.text == "executor exited with 3"


def test_explain_error_never_raises_even_with_empty_script():
    exp = explainer_for([])
    report = ErrorReport("Training", "EXECUTOR_FAILURE", "boom")
    assert exp.explain_error(report, "q").text == "boom"


def test_explain_error_references_artifact_dump():
    exp = explainer_for([
        entry("error-explainer", json.dumps({
            "summary": "s", "causes": ["c"], "resolutions": ["r"]})),
        entry("output-revise", SAFE_VERDICT),
    ])
    report = ErrorReport("Training", "EXECUTOR_FAILURE", "boom",
                         artifact_dump={"stderr": "trace"})
    assert "artifact_dump" in exp.explain_error(report, "q").context_refs


def test_briefing_names_upcoming_stage():
    exp = explainer_for([
        entry("next-stage", "Model selection finished; preprocessing comes next. "
                            "Add instructions if you like."),
        entry("output-revise", SAFE_VERDICT),
    ])
    briefing = exp.next_stage_briefing(Stage.ModelSelection, Stage.Preprocessing,
                                       "classify reviews")
    assert isinstance(briefing, StageBriefing)
    assert briefing.completed is Stage.ModelSelection
    assert briefing.upcoming is Stage.Preprocessing
    assert briefing.accepts_directives


def test_briefing_rejects_non_adjacent_stages():
    exp = explainer_for([])
    with pytest.raises(ValueError):
        exp.next_stage_briefing(Stage.Intake, Stage.Training, "q")
