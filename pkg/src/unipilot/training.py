"""Hyperparameter search loop, executors, progress estimation, job bundles."""

from __future__ import annotations

import enum
import itertools
import json
import random
import re
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

from .errors import (
    EmptySpace,
    ErrorReport,
    ExecutorFailure,
    MissingInput,
    NoFinishedTrials,
)
from .planning import SearchSpace, modify_config

EWMA_ALPHA = 0.3
MOCK_STEPS = 10
MOCK_STEP_MS = 100


class Direction(enum.Enum):
    Maximize = "Maximize"
    Minimize = "Minimize"


class TrialStatus(enum.Enum):
    Finished = "Finished"
    Aborted = "Aborted"
    Errored = "Errored"


@dataclass(frozen=True)
class Trial:
    trial_id: int
    assignment: dict[str, object]

    def to_json(self) -> dict:
        return {"trial_id": self.trial_id,
                "assignment": dict(sorted(self.assignment.items()))}


@dataclass(frozen=True)
class MetricPoint:
    step: int
    value: float
    wall_ms: int

    def to_json(self) -> dict:
        return {"step": self.step, "value": self.value, "wall_ms": self.wall_ms}


@dataclass(frozen=True)
class TrialResult:
    trial_id: int
    metric_name: str
    value: float | None
    direction: Direction
    steps: tuple[MetricPoint, ...]
    status: TrialStatus
    error: ErrorReport | None = None
    assignment: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "metric_name": self.metric_name,
            "value": self.value,
            "direction": self.direction.value,
            "steps": [p.to_json() for p in self.steps],
            "status": self.status.value,
            "error": self.error.to_json() if self.error else None,
            "assignment": dict(sorted(self.assignment.items())),
        }

    @classmethod
    def from_json(cls, data: dict) -> "TrialResult":
        return cls(
            trial_id=data["trial_id"],
            metric_name=data["metric_name"],
            value=data["value"],
            direction=Direction(data["direction"]),
            steps=tuple(MetricPoint(**p) for p in data["steps"]),
            status=TrialStatus(data["status"]),
            error=ErrorReport.from_json(data["error"]) if data.get("error") else None,
            assignment=dict(data.get("assignment", {})),
        )


@dataclass(frozen=True)
class ProgressEstimate:
    fraction_done: float
    eta_ms: int
    basis: str  # "StepRate" | "Unknown"

    def to_json(self) -> dict:
        return {"fraction_done": self.fraction_done, "eta_ms": self.eta_ms,
                "basis": self.basis}


def enumerate_trials(space: SearchSpace, budget: int, strategy: str = "grid",
                     seed: int = 0) -> list[Trial]:
    """Deterministic trial list; trial 0 is always the original-config point."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not space.params:
        raise EmptySpace("search space has no parameters")
    names = sorted(space.params)
    points = [dict(zip(names, combo))
              for combo in itertools.product(*(space.params[n] for n in names))]
    origin = {n: space.origin_config[n] for n in names}

    def is_origin(point: dict) -> bool:
        from .planning import _contains_value

        return all(_contains_value([point[n]], origin[n]) for n in names)

    rest = [p for p in points if not is_origin(p)]
    if strategy == "grid":
        ordered = [origin] + rest
    elif strategy == "random":
        rng = random.Random(seed)
        rng.shuffle(rest)
        ordered = [origin] + rest
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return [Trial(i, point) for i, point in enumerate(ordered[:budget])]


def synthetic_objective(assignment: dict, space: SearchSpace, optimum: dict) -> float:
    """Published mock objective with its maximum at the given optimum point.

    1 - mean over numeric params of ((idx(v) - idx(v*)) / (n-1))^2, plus a 0.1
    bonus scaled by the fraction of matching categorical params.
    """
    numeric, categorical = [], []
    for name, candidates in space.params.items():
        original = space.origin_config[name]
        if isinstance(original, (int, float)) and not isinstance(original, bool):
            numeric.append((name, candidates))
        else:
            categorical.append((name, candidates))
    penalty = 0.0
    if numeric:
        for name, candidates in numeric:
            n = len(candidates)
            if n <= 1:
                continue
            gap = (candidates.index(assignment[name]) - candidates.index(optimum[name]))
            penalty += (gap / (n - 1)) ** 2
        penalty /= len(numeric)
    bonus = 0.0
    if categorical:
        matches = sum(1 for name, _ in categorical if assignment[name] == optimum[name])
        bonus = 0.1 * matches / len(categorical)
    return 1.0 - penalty + bonus


class AbortSignal:
    """Idempotent abort flag shared between a control context and an executor."""

    def __init__(self):
        self._event = threading.Event()

    def set(self) -> None:
        self._event.set()

    def is_set(self) -> bool:
        return self._event.is_set()


MetricSink = Callable[[int, MetricPoint], None]


class Executor(Protocol):
    metric_name: str
    direction: Direction

    def run(self, trial: Trial, abort: AbortSignal | None,
            sink: MetricSink | None) -> TrialResult: ...


class MockExecutor:
    """In-process deterministic executor over the synthetic objective.

    Emits MOCK_STEPS metric points converging monotonically to the objective
    value; wall times are synthetic and identical across runs. A real per-step
    sleep can be enabled so live steering (abort, interventions) has a window
    to land; it never affects the recorded timings.
    """

    metric_name = "score"
    direction = Direction.Maximize

    def __init__(self, space: SearchSpace, optimum: dict,
                 steps: int = MOCK_STEPS, step_ms: int = MOCK_STEP_MS,
                 step_sleep_s: float = 0.0):
        self.space = space
        self.optimum = optimum
        self.steps = steps
        self.step_ms = step_ms
        self.step_sleep_s = step_sleep_s

    def run(self, trial: Trial, abort: AbortSignal | None = None,
            sink: MetricSink | None = None) -> TrialResult:
        import time

        final = synthetic_objective(trial.assignment, self.space, self.optimum)
        points = []
        for i in range(1, self.steps + 1):
            if abort is not None and abort.is_set():
                return TrialResult(trial.trial_id, self.metric_name, None,
                                   self.direction, tuple(points), TrialStatus.Aborted)
            if self.step_sleep_s:
                time.sleep(self.step_sleep_s)
            value = final if i == self.steps else final * (1.0 - 2.0 ** (-i))
            point = MetricPoint(step=i, value=value, wall_ms=i * self.step_ms)
            points.append(point)
            if sink is not None:
                sink(trial.trial_id, point)
        return TrialResult(trial.trial_id, self.metric_name, final, self.direction,
                           tuple(points), TrialStatus.Finished)


_METRIC_LINE_RE = re.compile(r"^STEP\s+(\d+)\s+METRIC\s+(\S+)\s+(-?[\d.eE+]+)\s*$")


class SubprocessExecutor:
    """Writes the trial's job bundle and runs a configurable command.

    The command receives the bundle directory as its last argument and reports
    progress on stdout as lines ``STEP <n> METRIC <name> <value>``.
    """

    direction = Direction.Maximize

    def __init__(self, command: str, workdir: str | Path, metric_name: str = "score",
                 direction: Direction = Direction.Maximize, config_text: str = ""):
        self.command = command
        self.workdir = Path(workdir)
        self.metric_name = metric_name
        self.direction = direction
        self.config_text = config_text

    def _write_bundle(self, trial: Trial) -> Path:
        bundle = self.workdir / "job" / str(trial.trial_id)
        bundle.mkdir(parents=True, exist_ok=True)
        (bundle / "run.sh").write_text(
            "#!/bin/sh\n# emit: STEP <n> METRIC <name> <value>\n"
            f"{self.command} \"$(dirname \"$0\")\"\n", encoding="utf-8")
        (bundle / "config").write_text(self.config_text, encoding="utf-8")
        (bundle / "manifest.json").write_text(json.dumps({
            "trial_id": trial.trial_id,
            "assignment": dict(sorted(trial.assignment.items())),
            "metric_name": self.metric_name,
            "direction": self.direction.value,
        }, indent=2, sort_keys=True), encoding="utf-8")
        return bundle

    def run(self, trial: Trial, abort: AbortSignal | None = None,
            sink: MetricSink | None = None) -> TrialResult:
        bundle = self._write_bundle(trial)
        argv = shlex.split(self.command) + [str(bundle)]
        points: list[MetricPoint] = []
        try:
            proc = subprocess.Popen(argv, stdout=subprocess.PIPE, text=True)
        except OSError as exc:
            raise ExecutorFailure(f"cannot launch executor command: {exc}") from exc
        started_ms = 0
        for line in proc.stdout:
            if abort is not None and abort.is_set():
                proc.terminate()
                proc.wait()
                return TrialResult(trial.trial_id, self.metric_name, None,
                                   self.direction, tuple(points), TrialStatus.Aborted)
            m = _METRIC_LINE_RE.match(line.strip())
            if not m:
                continue
            started_ms += MOCK_STEP_MS
            point = MetricPoint(step=int(m.group(1)), value=float(m.group(3)),
                                wall_ms=started_ms)
            points.append(point)
            if sink is not None:
                sink(trial.trial_id, point)
        code = proc.wait()
        if code != 0:
            raise ExecutorFailure(f"executor command exited with {code}")
        if not points:
            raise ExecutorFailure("executor reported no metric points")
        return TrialResult(trial.trial_id, self.metric_name, points[-1].value,
                           self.direction, tuple(points), TrialStatus.Finished)


def run_trial(trial: Trial, executor: Executor, abort: AbortSignal | None = None,
              sink: MetricSink | None = None, stage: str = "Training") -> TrialResult:
    """One executor run; failures become an Errored result, never a raise."""
    import dataclasses

    try:
        result = executor.run(trial, abort, sink)
    except Exception as exc:  # executor faults are data, not control flow
        report = ErrorReport.from_exception(stage, exc)
        if not isinstance(exc, ExecutorFailure):
            report = ErrorReport(stage, "EXECUTOR_FAILURE", str(exc))
        result = TrialResult(trial.trial_id, executor.metric_name, None,
                             executor.direction, (), TrialStatus.Errored, error=report)
    return dataclasses.replace(result, assignment=dict(trial.assignment))


def pick_best(results: list[TrialResult]) -> TrialResult:
    """Best finished trial per its direction; ties go to the lowest trial id."""
    finished = [r for r in results if r.status is TrialStatus.Finished]
    if not finished:
        raise NoFinishedTrials("no finished trials to choose from")
    reverse = finished[0].direction is Direction.Maximize

    def key(r: TrialResult):
        return (-r.value if reverse else r.value, r.trial_id)

    return min(finished, key=key)


def hpo_loop(space: SearchSpace, budget: int, strategy: str, executor: Executor,
             seed: int = 0, between_trials: Callable[[], None] | None = None,
             abort_signal_for: Callable[[int], AbortSignal] | None = None,
             sink: MetricSink | None = None,
             result_sink: Callable[[TrialResult], None] | None = None,
             trial_sink: Callable[[Trial], None] | None = None,
             ) -> tuple[TrialResult, list[TrialResult]]:
    """Sequential search; the between-trials hook is the intervention point."""
    trials = enumerate_trials(space, budget, strategy, seed)
    results: list[TrialResult] = []
    for i, trial in enumerate(trials):
        if i > 0 and between_trials is not None:
            between_trials()
        if trial_sink is not None:
            trial_sink(trial)
        abort = abort_signal_for(trial.trial_id) if abort_signal_for else None
        result = run_trial(trial, executor, abort, sink)
        results.append(result)
        if result_sink is not None:
            result_sink(result)
    return pick_best(results), results


def estimate_progress(points: list[MetricPoint], total_steps: int) -> ProgressEstimate:
    """Fraction from step counts; ETA from an EWMA of step durations."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not points:
        return ProgressEstimate(0.0, 0, "Unknown")
    fraction = min(1.0, points[-1].step / total_steps)
    if len(points) < 2:
        return ProgressEstimate(fraction, 0, "Unknown")
    durations = [b.wall_ms - a.wall_ms for a, b in zip(points, points[1:])]
    ewma = float(durations[0])
    for d in durations[1:]:
        ewma = EWMA_ALPHA * d + (1.0 - EWMA_ALPHA) * ewma
    remaining = max(0, total_steps - points[-1].step)
    return ProgressEstimate(fraction, int(round(remaining * ewma)), "StepRate")


class JobKind(enum.Enum):
    DiffusionLoRAFinetune = "DiffusionLoRAFinetune"
    LLMFinetune = "LLMFinetune"
    DiscriminativeTrain = "DiscriminativeTrain"


@dataclass(frozen=True)
class JobSpec:
    kind: JobKind
    inputs: dict[str, str]
    emitted_files: tuple[tuple[str, str], ...]

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "inputs": dict(sorted(self.inputs.items())),
                "emitted_files": [[p, c] for p, c in self.emitted_files]}

    def write_to(self, directory: str | Path) -> None:
        root = Path(directory)
        for rel_path, content in self.emitted_files:
            target = root / rel_path
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(content, encoding="utf-8")


def _require_input(inputs: dict, name: str) -> str:
    value = inputs.get(name, "")
    if not value:
        raise MissingInput(f"job input {name!r} is required", name=name)
    return value


def build_finetune_job(category, selected, inputs: dict[str, str], plans: dict,
                       library, gateway=None) -> JobSpec:
    """Job bundle for an external trainer; kind follows the task category."""
    from .task_analysis import TaskCategory

    if category is TaskCategory.GenerativeDiffusion:
        dataset = _require_input(inputs, "dataset_address")
        base_model = selected.model_id if selected else _require_input(inputs, "base_model")
        script = library.get("diffusion-job").render({"dataset_address": dataset})
        manifest = {
            "kind": "DiffusionLoRAFinetune",
            "base_model": base_model,
            "dataset_address": dataset,
            "method": "lora",
        }
        return JobSpec(
            kind=JobKind.DiffusionLoRAFinetune,
            inputs={"dataset_address": dataset, "base_model": base_model},
            emitted_files=(
                ("job.md", script),
                ("manifest.json", json.dumps(manifest, indent=2, sort_keys=True)),
            ),
        )

    if category is TaskCategory.GenerativeLLM:
        config_path = _require_input(inputs, "config_path")
        save_path = _require_input(inputs, "save_path")
        model_path = inputs.get("model_path", "")
        script = library.get("llm-finetune-job").render({
            "cfg_address": config_path,
            "llm_address": model_path or "n/a",
            "address": save_path,
        })
        files = [("job.md", script)]
        config_doc = plans.get("config_document")
        if config_doc is not None and gateway is not None:
            substitutions = {}
            if inputs.get("dataset_path") and config_doc.has("data_path"):
                substitutions["data_path"] = f"'{inputs['dataset_path']}'"
            if model_path and config_doc.has("pretrained_model_name_or_path"):
                substitutions["pretrained_model_name_or_path"] = f"'{model_path}'"
            modified = modify_config(config_doc, [], substitutions, gateway, library,
                                     context={"llm_address": model_path or "n/a",
                                              "cfg_address": config_path,
                                              "data": inputs.get("dataset_path", "n/a")})
            files.append(("config", modified.raw_text))
        manifest = {
            "kind": "LLMFinetune",
            "steps": [
                f"xtuner train {config_path} --deepspeed deepspeed_zero2",
                f"xtuner convert pth_to_hf {config_path} <pth> {save_path}",
            ],
            "save_path": save_path,
        }
        files.append(("manifest.json", json.dumps(manifest, indent=2, sort_keys=True)))
        return JobSpec(
            kind=JobKind.LLMFinetune,
            inputs={"config_path": config_path, "save_path": save_path,
                    **({"model_path": model_path} if model_path else {})},
            emitted_files=tuple(files),
        )

    dataset = _require_input(inputs, "dataset_path")
    manifest = {
        "kind": "DiscriminativeTrain",
        "dataset_path": dataset,
        "base_model": selected.model_id if selected else "",
    }
    config_doc = plans.get("config_document")
    files = [("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))]
    if config_doc is not None:
        files.insert(0, ("config", config_doc.raw_text))
    return JobSpec(
        kind=JobKind.DiscriminativeTrain,
        inputs={"dataset_path": dataset},
        emitted_files=tuple(files),
    )
