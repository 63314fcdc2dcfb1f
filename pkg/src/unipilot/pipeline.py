"""Engine wiring: stage handlers, the per-session runtime, and replay.

The runtime is the single writer for its session. Interventions arrive on a
queue from any thread and are consumed only at stage boundaries and between
hyperparameter trials.
"""

from __future__ import annotations

import dataclasses
import threading
import time
from typing import Callable

from .clock import LogicalClock, WallClock
from .config import EngineConfig
from .configdoc import ConfigDocument
from .errors import ErrorReport, GuardRefusal, StructuredOutputFailed, UniPilotError
from .explainer import Explainer
from .gateway import (
    CompletionRequest,
    LlmGateway,
    ReplayResponder,
    ScriptedResponder,
    RemoteChatProvider,
)
from .guardline import Guardline, REFUSAL_TEXT
from .embedding import LocalHashEmbedder, RemoteEmbedder
from .planning import (
    SearchSpace,
    describe_hyperparameters,
    infer_search_space,
    plan_fusion,
    plan_preprocessing,
)
from .prompts import PromptLibrary
from .registry import Category, ModelRegistry, SelectedModel, select_best, shortlist
from .session import (
    EXCHANGE_KINDS,
    InterventionEvent,
    InterventionPending,
    K_BRIEFING,
    K_ERROR,
    K_EXPLANATION,
    K_GUARDLINE,
    K_LLM,
    K_PROGRESS,
    K_RETRACE,
    K_STAGE_RESULT,
    K_USER,
    SessionState,
    Stage,
    Status,
    TERMINAL_STATUSES,
    TranscriptEntry,
    start_session,
)
from .store import SessionStore
from .structured import text_enum_schema, complete_structured
from .task_analysis import (
    DatasetPreview,
    ModalityMap,
    TaskCategory,
    TaskTypeCatalog,
    classify_category,
    infer_modalities,
    read_preview,
    resolve_task_type,
)
from .training import (
    AbortSignal,
    MockExecutor,
    SubprocessExecutor,
    build_finetune_job,
    estimate_progress,
    hpo_loop,
)

DEFAULT_CONFIG_TEXT = """lr = 0.001
batch_size = 32
epochs = 10
weight_decay = 0.0001
"""

GUARD_TEMPLATES = ("input-filter", "output-revise")

INTERVENTION_RESOLVER_PROMPT = (
    "You route a user's mid-run instruction for an automated machine learning "
    "pipeline to the stage it concerns. The stages that can be re-run, in "
    "order, are: {stages}. Respond with exactly one stage name from that "
    "list and nothing else."
)


class SessionClock:
    """Session-owned clock; logical ticks are mirrored into the state so a
    recovered session continues the exact tick sequence."""

    def __init__(self, session: SessionState, logical: bool):
        self.session = session
        self.logical = logical
        self._base = LogicalClock(start_ms=session.clock_ms) if logical else WallClock()

    def now_ms(self) -> int:
        value = self._base.now_ms()
        if self.logical:
            self.session.clock_ms = value
        return value


class Engine:
    """Shared services: config, prompts, providers, card registry, store."""

    def __init__(self, config: EngineConfig):
        self.config = config
        self.library = PromptLibrary(config.prompts_dir)
        self.catalog = TaskTypeCatalog.load(config.task_catalog_path)
        self.store = SessionStore(config.store_dir)
        self.registry = ModelRegistry(config.cards_dir)
        self._indexes = {}
        if config.embedder == "local":
            self.embedder = LocalHashEmbedder(config.embedder_dim)
        else:
            self.embedder = RemoteEmbedder(config.embedder_base_url,
                                           config.embedder_model,
                                           config.embedder_dim)

    def make_provider(self):
        if self.config.chat_provider == "scripted":
            return ScriptedResponder.from_file(self.config.script_path,
                                               strict=self.config.script_strict)
        return RemoteChatProvider(self.config.remote_base_url, self.config.remote_model)

    def index_for(self, category: TaskCategory):
        key = Category.Discriminative if category is TaskCategory.Discriminative \
            else Category.Generative
        if key not in self._indexes:
            self._indexes[key] = self.registry.build_index(key, self.embedder)
        return key, self._indexes[key]

    def new_session(self, query: str, dataset_path: str | None = None,
                    extra_inputs: dict | None = None) -> "SessionRuntime":
        inputs = dict(extra_inputs or {})
        if dataset_path:
            preview = read_preview(dataset_path)
            inputs["dataset_path"] = str(dataset_path)
            inputs["dataset_preview"] = preview.to_json()
        session = start_session(self.store.next_session_id(), query,
                                at_ms=0, inputs=inputs)
        clock = SessionClock(session, self.config.use_logical_clock)
        at = clock.now_ms()
        session.created_at = at
        session.transcript[0] = dataclasses.replace(session.transcript[0], at_ms=at)
        session.last_committed_ordinal = len(session.transcript)
        self.store.persist(session)
        return SessionRuntime(self, session)

    def load_session(self, session_id: str) -> "SessionRuntime":
        session = self.store.load(session_id)
        return SessionRuntime(self, session)


class StageContext:
    """What a stage handler is allowed to see and do."""

    def __init__(self, runtime: "SessionRuntime"):
        self.runtime = runtime
        self.engine = runtime.engine
        self.session = runtime.session
        self.gateway = runtime.gateway
        self.guardline = runtime.guardline
        self.library = runtime.engine.library
        self.config = runtime.engine.config
        self._trial_points: dict[int, list] = {}

    @property
    def artifacts(self) -> dict:
        return self.session.artifacts

    @property
    def base_query(self) -> str:
        filtered = self.artifacts.get("filtered_query")
        if filtered and filtered.get("rewritten"):
            return filtered["rewritten"]
        return self.session.query

    def effective_query(self) -> str:
        """Filtered query plus this stage's accumulated directives."""
        parts = [self.base_query] + self.session.directives_for(
            self.session.current_stage)
        return " || ".join(parts)

    def between_trials(self) -> None:
        self.runtime.maybe_inject_tape()
        if self.session.pending_interventions:
            raise InterventionPending()

    def progress(self, trial_id: int, point) -> None:
        points = self._trial_points.setdefault(trial_id, [])
        points.append(point)
        estimate = estimate_progress(points, total_steps=self.runtime.total_steps())
        self.runtime.append(K_PROGRESS, self.session.current_stage, {
            "trial_id": trial_id,
            "point": point.to_json(),
            "estimate": estimate.to_json(),
        })

    def trial_started(self, trial) -> None:
        self.runtime.note_trial_running(trial.trial_id)
        self.runtime.append(K_PROGRESS, self.session.current_stage, {
            "trial_id": trial.trial_id,
            "event": "trial_started",
            "assignment": dict(sorted(trial.assignment.items())),
        })

    def trial_finished(self, result) -> None:
        self.runtime.note_trial_done(result.trial_id, result.status.value)
        self.runtime.append(K_PROGRESS, self.session.current_stage, {
            "trial_id": result.trial_id,
            "event": "trial_finished",
            "status": result.status.value,
            "value": result.value,
        })


# ---------------------------------------------------------------------------
# stage handlers


def handle_intake(ctx: StageContext) -> dict:
    filtered = ctx.guardline.filter_input(ctx.session.query)
    if not filtered.allowed:
        raise GuardRefusal(REFUSAL_TEXT, cause="input_filter", reason=filtered.reason)
    artifacts = {"filtered_query": {
        "original": filtered.original,
        "allowed": filtered.allowed,
        "rewritten": filtered.rewritten,
        "reason": filtered.reason,
    }}
    preview = ctx.session.inputs.get("dataset_preview")
    if preview:
        artifacts["dataset_preview"] = preview
    return artifacts


def handle_task_analysis(ctx: StageContext) -> dict:
    query = ctx.effective_query()
    category = classify_category(query, ctx.gateway, ctx.library,
                                 ctx.config.structured_attempts)
    preview_json = ctx.artifacts.get("dataset_preview")
    if preview_json:
        preview = DatasetPreview.from_json(preview_json)
        modalities = infer_modalities(preview, query, ctx.gateway, ctx.library,
                                      ctx.config.structured_attempts)
    else:
        modalities = ModalityMap(columns={})
    task_type = resolve_task_type(query, category, modalities,
                                  ctx.engine.catalog, ctx.engine.embedder)
    return {
        "task_category": category.value,
        "modality_map": modalities.to_json(),
        "task_type": task_type,
    }


def handle_model_selection(ctx: StageContext) -> dict:
    category = TaskCategory(ctx.artifacts["task_category"])
    routed, index = ctx.engine.index_for(category)
    ranked = shortlist(index, ctx.artifacts["task_type"], ctx.engine.embedder)
    selected = select_best(ranked, ctx.effective_query(), ctx.engine.registry.cards,
                           ctx.engine.embedder)
    return {
        "index_category": routed.value,
        "shortlist": ranked.to_json(),
        "selected_model": selected.to_json(),
    }


def handle_preprocessing(ctx: StageContext) -> dict:
    category = TaskCategory(ctx.artifacts["task_category"])
    if category is TaskCategory.Discriminative:
        modalities = ModalityMap.from_json(ctx.artifacts["modality_map"])
        plan = plan_preprocessing(modalities, None, ctx.gateway, ctx.library,
                                  ctx.config.structured_attempts)
        return {"preprocess_plan": plan.to_json()}
    if category is TaskCategory.GenerativeLLM:
        data_address = ctx.session.inputs.get("dataset_path", "./data/standardized.jsonl")
        prompt = ctx.library.render("dataset-standardize", {"data": data_address})
        request = CompletionRequest.build("dataset-standardize", prompt,
                                          user=ctx.effective_query())
        code = ctx.gateway.complete(request).raw_text
        return {"standardize_code": {"data_address": data_address, "code": code}}
    return {"preprocess_note": "diffusion fine-tune consumes the dataset directly"}


def handle_configuration(ctx: StageContext) -> dict:
    selected = ctx.artifacts.get("selected_model") or {}
    config_text = (selected.get("card") or {}).get("config_text") or DEFAULT_CONFIG_TEXT
    doc = ConfigDocument.parse(config_text)
    descriptions = describe_hyperparameters(doc, ctx.gateway, ctx.library,
                                            ctx.config.structured_attempts)
    space = infer_search_space(descriptions, doc, ctx.gateway, ctx.library,
                               ctx.config.structured_attempts)
    artifacts = {
        "config_document": {"raw_text": doc.raw_text, "syntax": doc.syntax},
        "hyperparam_descriptions": descriptions,
        "search_space": space.to_json(),
    }
    base_models = ctx.session.inputs.get("base_models")
    if base_models and len(base_models) >= 2:
        plan = plan_fusion([(m["name"], int(m["out_dim"])) for m in base_models],
                           ctx.gateway, ctx.library)
        artifacts["fusion_plan"] = plan.to_json()
    return artifacts


def handle_training(ctx: StageContext) -> dict:
    category = TaskCategory(ctx.artifacts["task_category"])
    if category.is_generative:
        selected_json = ctx.artifacts.get("selected_model") or {}
        selected = None
        if selected_json:
            from .registry import ModelCard

            selected = SelectedModel(
                model_id=selected_json["model_id"], score=selected_json["score"],
                card=ModelCard.from_json(selected_json["card"]))
        inputs = dict(ctx.session.inputs)
        inputs.setdefault("dataset_address", inputs.get("dataset_path", ""))
        plans = {}
        cfg = ctx.artifacts.get("config_document")
        if cfg:
            plans["config_document"] = ConfigDocument.parse(cfg["raw_text"])
        job = build_finetune_job(category, selected, inputs, plans,
                                 ctx.library, ctx.gateway)
        return {"job_spec": job.to_json()}

    space = SearchSpace.from_json(ctx.artifacts["search_space"])
    executor = ctx.runtime.make_executor(space)
    best, results = hpo_loop(
        space,
        budget=ctx.config.budget,
        strategy=ctx.config.strategy,
        executor=executor,
        seed=ctx.config.seed,
        between_trials=ctx.between_trials,
        abort_signal_for=ctx.runtime.abort_signal_for,
        sink=ctx.progress,
        result_sink=ctx.trial_finished,
        trial_sink=ctx.trial_started,
    )
    return {
        "trial_history": [r.to_json() for r in results],
        "best_trial": best.to_json(),
    }


def handle_report(ctx: StageContext) -> dict:
    artifacts = ctx.artifacts
    report = {
        "query": ctx.session.query,
        "filtered_query": artifacts.get("filtered_query"),
        "task_category": artifacts.get("task_category"),
        "task_type": artifacts.get("task_type"),
        "modality_map": artifacts.get("modality_map"),
        "selected_model": _strip_card(artifacts.get("selected_model")),
        "shortlist": artifacts.get("shortlist"),
        "search_space": artifacts.get("search_space"),
        "best_trial": artifacts.get("best_trial"),
        "job_spec": artifacts.get("job_spec"),
        "directives": {s.name: d for s, d in ctx.session.stage_directives.items() if d},
    }
    return {"report": report}


def _strip_card(selected):
    if not selected:
        return selected
    slim = dict(selected)
    card = dict(slim.get("card") or {})
    card.pop("card_text", None)
    slim["card"] = card
    return slim


DEFAULT_HANDLERS: dict[str, Callable[[StageContext], dict]] = {
    Stage.Intake.name: handle_intake,
    Stage.TaskAnalysis.name: handle_task_analysis,
    Stage.ModelSelection.name: handle_model_selection,
    Stage.Preprocessing.name: handle_preprocessing,
    Stage.Configuration.name: handle_configuration,
    Stage.Training.name: handle_training,
    Stage.Report.name: handle_report,
}


# ---------------------------------------------------------------------------
# per-session runtime


class SessionRuntime:
    """Single writer for one session; thread-safe intervention handoff."""

    def __init__(self, engine: Engine, session: SessionState, provider=None,
                 handlers: dict | None = None):
        self.engine = engine
        self.session = session
        self.handlers = handlers or DEFAULT_HANDLERS
        self.provider = provider or engine.make_provider()
        if isinstance(self.provider, ScriptedResponder):
            consumed = sum(1 for e in session.transcript if e.kind in EXCHANGE_KINDS)
            self.provider.fast_forward(consumed)
        cfg = engine.config
        self.clock = SessionClock(session, cfg.use_logical_clock)
        sleeper = (lambda seconds: None) if cfg.chat_provider == "scripted" else time.sleep
        self.gateway = LlmGateway(self.provider, recorder=self._record_llm,
                                  transport_retries=cfg.transport_retries,
                                  backoff_base_ms=cfg.backoff_base_ms,
                                  clock=self.clock, sleeper=sleeper)
        self.guard_gateway = LlmGateway(self.provider, recorder=self._record_guard,
                                        transport_retries=cfg.transport_retries,
                                        backoff_base_ms=cfg.backoff_base_ms,
                                        clock=self.clock, sleeper=sleeper)
        self.guardline = Guardline(self.guard_gateway, engine.library,
                                   max_rounds=cfg.guard_max_rounds,
                                   structured_attempts=cfg.structured_attempts)
        self.explainer = Explainer(self.gateway, self.guardline, engine.library,
                                   structured_attempts=cfg.structured_attempts)
        self.lock = threading.RLock()
        self.listeners: list[Callable[[TranscriptEntry], None]] = []
        self.trial_states: dict[int, str] = {}
        self._abort_signals: dict[int, AbortSignal] = {}
        self.tape: list[TranscriptEntry] | None = None

    # -- transcript plumbing --

    def append(self, kind: str, stage: Stage, payload: dict,
               at_ms: int | None = None) -> TranscriptEntry:
        entry = TranscriptEntry(ordinal=self.session.next_ordinal(), kind=kind,
                                stage=stage.name, payload=payload,
                                at_ms=self.clock.now_ms()
                                if at_ms is None else at_ms)
        self.session.transcript.append(entry)
        self.engine.store.append_entry(self.session.session_id, entry)
        for listener in list(self.listeners):
            listener(entry)
        return entry

    def commit(self) -> None:
        self.session.last_committed_ordinal = len(self.session.transcript)
        self.engine.store.write_state(self.session)

    def _record_llm(self, template_id, prompt, raw, latency_ms):
        self.append(K_LLM, self.session.current_stage, {
            "template_id": template_id, "prompt": prompt,
            "response": raw, "latency_ms": latency_ms,
        })

    def _record_guard(self, template_id, prompt, raw, latency_ms):
        self.append(K_GUARDLINE, self.session.current_stage, {
            "template_id": template_id, "prompt": prompt,
            "response": raw, "latency_ms": latency_ms,
        })

    # -- trials --

    def total_steps(self) -> int:
        from .training import MOCK_STEPS

        return MOCK_STEPS

    def make_executor(self, space: SearchSpace):
        cfg = self.engine.config
        if cfg.executor == "subprocess":
            workdir = cfg.executor_workdir or str(
                self.engine.store.session_dir(self.session.session_id) / "work")
            config_doc = self.session.artifacts.get("config_document") or {}
            return SubprocessExecutor(cfg.executor_command, workdir,
                                      config_text=config_doc.get("raw_text", ""))
        optimum = {}
        for name in space.params:
            if name in cfg.mock_optimum:
                optimum[name] = cfg.mock_optimum[name]
            else:
                optimum[name] = space.origin_config[name]
        return MockExecutor(space, optimum, step_sleep_s=cfg.mock_step_sleep_s)

    def note_trial_running(self, trial_id: int) -> None:
        self.trial_states[trial_id] = "running"

    def note_trial_done(self, trial_id: int, status: str) -> None:
        self.trial_states[trial_id] = status.lower()

    def abort_signal_for(self, trial_id: int) -> AbortSignal:
        if trial_id not in self._abort_signals:
            self._abort_signals[trial_id] = AbortSignal()
        return self._abort_signals[trial_id]

    def abort_trial(self, trial_id: int) -> None:
        self.abort_signal_for(trial_id).set()

    # -- replay tape --

    def use_tape(self, entries: list[TranscriptEntry]) -> None:
        self.tape = [e for e in entries if e.kind == K_USER and
                     e.payload.get("role") in ("directive", "intervention")]

    def maybe_inject_tape(self) -> None:
        if not self.tape:
            return
        nxt = self.tape[0]
        if nxt.ordinal == self.session.next_ordinal() \
                and nxt.payload.get("role") == "intervention":
            self.tape.pop(0)
            event = InterventionEvent(text=nxt.payload["text"],
                                      received_at=nxt.payload.get("received_at", 0))
            self.session.pending_interventions.append(event)

    def _tape_directive(self):
        if not self.tape:
            return None
        nxt = self.tape[0]
        if nxt.ordinal == self.session.next_ordinal() \
                and nxt.payload.get("role") == "directive":
            self.tape.pop(0)
            return nxt.payload["text"]
        return None

    # -- intervention handling --

    def queue_intervention(self, text: str) -> InterventionEvent:
        # received_at is stamped when the event is consumed at a boundary, so
        # queueing never advances the deterministic clock
        event = InterventionEvent(text=text, received_at=0)
        self.session.pending_interventions.append(event)
        return event

    def consume_interventions(self) -> None:
        while self.session.pending_interventions:
            event = self.session.pending_interventions.popleft()
            if not self.apply_intervention(event):
                break

    def apply_intervention(self, event: InterventionEvent) -> bool:
        """Resolve the target stage, retrace to it, and record the audit trail.

        Returns False when the target is unresolvable; the event goes back on
        the queue and the session waits for clarification.
        """
        session = self.session
        if session.status in TERMINAL_STATUSES:
            raise UniPilotError("session is terminal; no interventions accepted")
        at = self.clock.now_ms()
        if not event.received_at:
            event.received_at = at
        self.append(K_USER, session.current_stage, {
            "text": event.text, "role": "intervention",
            "received_at": event.received_at,
        }, at_ms=at)
        # a mid-run instruction is a user message: it passes the input filter
        # before any other model call in this turn
        filtered = self.guardline.filter_input(event.text)
        if not filtered.allowed:
            self.append(K_ERROR, session.current_stage, {
                "code": "GUARD_REFUSAL",
                "message": f"intervention rejected by the input filter: {filtered.reason}",
            })
            self.commit()
            return True  # event consumed; the run continues unchanged
        instruction = filtered.rewritten
        candidates = [s.name for s in Stage
                      if s in session.checkpoints or s is session.current_stage]
        prompt = INTERVENTION_RESOLVER_PROMPT.format(stages=", ".join(candidates))
        request = CompletionRequest.build("intervention-target", prompt,
                                          user=instruction)
        try:
            name = complete_structured(self.gateway, request,
                                       text_enum_schema("intervention-target", candidates),
                                       max_attempts=2)
        except StructuredOutputFailed:
            session.pending_interventions.appendleft(event)
            session.status = Status.AwaitingUser
            self.append(K_ERROR, session.current_stage, {
                "code": "UNRESOLVABLE_TARGET",
                "message": f"could not resolve the stage for: {event.text}",
            })
            self.commit()
            return False
        target = Stage[name]
        event.resolved_target = target
        discarded = sorted((s for s in session.checkpoints if s.ordinal > target.ordinal),
                           key=lambda s: s.ordinal)
        payload = {
            "target": target.name,
            "discarded": [session.checkpoints[s].to_json() for s in discarded],
        }
        for stage in discarded:
            del session.checkpoints[stage]
            self.engine.store.remove_checkpoint(session.session_id, stage)
        if target in session.checkpoints:
            restored = session.checkpoints.pop(target)
            self.engine.store.remove_checkpoint(session.session_id, target)
            payload["restored"] = restored.to_json()
        session.add_directive(target, instruction)
        session.current_stage = target
        session.status = Status.Running
        self.append(K_RETRACE, target, payload)
        self.commit()
        return True

    # -- stage execution --

    def run_stage(self) -> SessionState:
        with self.lock:
            session = self.session
            self.maybe_inject_tape()
            self.consume_interventions()
            if session.status is not Status.Running:
                return session
            stage = session.current_stage
            ctx = StageContext(self)
            handler = self.handlers[stage.name]
            try:
                new_artifacts = handler(ctx)
            except InterventionPending:
                self.consume_interventions()
                return session
            except GuardRefusal as exc:
                reason = exc.details.get("reason", "")
                self.append(K_ERROR, stage, {"code": "GUARD_REFUSAL",
                                             "message": exc.message,
                                             "reason": reason})
                self.append(K_EXPLANATION, stage, {
                    "subject_kind": "Error", "text": REFUSAL_TEXT,
                    "context_refs": [], "refused": True,
                })
                session.inputs["refusal_reason"] = reason or exc.message
                session.status = Status.Refused
                self.commit()
                return session
            except Exception as exc:
                report = ErrorReport.from_exception(stage.name, exc)
                self.append(K_ERROR, stage, report.to_json())
                explanation = self.explainer.explain_error(
                    report, ctx.base_query, context={"stage": stage.name})
                self.append(K_EXPLANATION, stage, explanation.to_json())
                session.status = Status.Failed
                self.commit()
                return session

            merged = {**session.artifacts, **new_artifacts}
            from .session import Checkpoint

            checkpoint = Checkpoint(stage=stage, artifacts=merged,
                                    created_at=self.clock.now_ms(),
                                    directives=session.directives_for(stage))
            session.checkpoints[stage] = checkpoint
            self.engine.store.write_checkpoint(session.session_id, checkpoint)
            self.append(K_STAGE_RESULT, stage, {"artifacts": new_artifacts})

            explanation = self.explainer.explain_result(
                new_artifacts, ctx.effective_query(),
                context={"stage": stage.name,
                         "modality_map": merged.get("modality_map"),
                         "selected_model": _strip_card(merged.get("selected_model"))},
                context_refs=tuple(sorted(new_artifacts)))
            self.append(K_EXPLANATION, stage, explanation.to_json())

            if stage is Stage.Report:
                session.status = Status.Completed
                self.commit()
                return session

            briefing = self.explainer.next_stage_briefing(stage, stage.next,
                                                          ctx.base_query)
            self.append(K_BRIEFING, stage, briefing.to_json())
            if self.engine.config.interactive:
                session.status = Status.AwaitingUser
            else:
                session.current_stage = stage.next
            self.commit()
            return session

    def resume(self, directive_text: str | None = None) -> SessionState:
        """Leave AwaitingUser: clarify a stuck intervention or start the next stage."""
        with self.lock:
            session = self.session
            if session.status is not Status.AwaitingUser:
                raise UniPilotError("session is not awaiting user input")
            if session.pending_interventions:
                stuck = session.pending_interventions.popleft()
                text = stuck.text if not directive_text \
                    else f"{stuck.text} | clarification: {directive_text}"
                event = InterventionEvent(text=text, received_at=stuck.received_at)
                session.status = Status.Running
                self.apply_intervention(event)
                return session
            upcoming = session.current_stage.next
            if directive_text:
                self.append(K_USER, upcoming, {
                    "text": directive_text, "role": "directive",
                    "for_stage": upcoming.name,
                })
                filtered = self.guardline.filter_input(directive_text)
                if not filtered.allowed:
                    self.append(K_ERROR, session.current_stage, {
                        "code": "GUARD_REFUSAL",
                        "message": "directive rejected by the input filter: "
                                   + filtered.reason,
                    })
                    self.commit()
                    return session  # still awaiting a usable directive
                session.add_directive(upcoming, filtered.rewritten)
            session.current_stage = upcoming
            session.status = Status.Running
            self.commit()
            return session

    def run_to_completion(self) -> SessionState:
        """Drive until the session leaves Running; callers own AwaitingUser."""
        while self.session.status is Status.Running:
            self.run_stage()
        return self.session
