"""Engine error types and the closed machine-readable error-code registry."""

from __future__ import annotations


class UniPilotError(Exception):
    """Base class for every engine error; carries a registered machine code."""

    code = "INTERNAL"

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.message = message
        self.details = details


class EmptyQuery(UniPilotError):
    code = "EMPTY_QUERY"


class ConfigError(UniPilotError):
    code = "CONFIG_ERROR"


class StageFailed(UniPilotError):
    code = "STAGE_FAILED"


class GuardRefusal(UniPilotError):
    code = "GUARD_REFUSAL"


class UnresolvableTarget(UniPilotError):
    code = "UNRESOLVABLE_TARGET"


class NotFound(UniPilotError):
    code = "NOT_FOUND"


class CorruptRecord(UniPilotError):
    code = "CORRUPT_RECORD"


class ProviderUnavailable(UniPilotError):
    code = "PROVIDER_UNAVAILABLE"


class ScriptExhausted(UniPilotError):
    code = "SCRIPT_EXHAUSTED"


class ScriptMismatch(UniPilotError):
    code = "SCRIPT_MISMATCH"


class UnparseableOutput(UniPilotError):
    code = "UNPARSEABLE_OUTPUT"


class SchemaViolation(UniPilotError):
    code = "SCHEMA_VIOLATION"

    def __init__(self, message: str, path: str = "", **details):
        super().__init__(message, path=path, **details)
        self.path = path


class StructuredOutputFailed(UniPilotError):
    code = "STRUCTURED_OUTPUT_FAILED"


class MissingPlaceholder(UniPilotError):
    code = "MISSING_PLACEHOLDER"


class UnknownPlaceholder(UniPilotError):
    code = "UNKNOWN_PLACEHOLDER"


class DimensionMismatch(UniPilotError):
    code = "DIMENSION_MISMATCH"


class ZeroVector(UniPilotError):
    code = "ZERO_VECTOR"


class CategoryMismatch(UniPilotError):
    code = "CATEGORY_MISMATCH"


class EmptyCorpus(UniPilotError):
    code = "EMPTY_CORPUS"


class SourceUnavailable(UniPilotError):
    code = "SOURCE_UNAVAILABLE"


class PathNotFound(UniPilotError):
    code = "PATH_NOT_FOUND"


class PlanInvalid(UniPilotError):
    code = "PLAN_INVALID"

    def __init__(self, message: str, violations: list[str] | None = None, **details):
        super().__init__(message, violations=violations or [], **details)
        self.violations = violations or []


class TooFewModels(UniPilotError):
    code = "TOO_FEW_MODELS"


class SpaceInvalid(UniPilotError):
    code = "SPACE_INVALID"

    def __init__(self, message: str, violations: list[str] | None = None, **details):
        super().__init__(message, violations=violations or [], **details)
        self.violations = violations or []


class UnknownKey(UniPilotError):
    code = "UNKNOWN_KEY"


class UnintendedEdit(UniPilotError):
    code = "UNINTENDED_EDIT"


class EmptySpace(UniPilotError):
    code = "EMPTY_SPACE"


class ExecutorFailure(UniPilotError):
    code = "EXECUTOR_FAILURE"


class NoFinishedTrials(UniPilotError):
    code = "NO_FINISHED_TRIALS"


class MissingInput(UniPilotError):
    code = "MISSING_INPUT"


class ErrorReport:
    """Machine-shaped error surfaced to the explainer and the transcript."""

    def __init__(self, stage: str, code: str, message: str, artifact_dump=None):
        if not is_registered(code):
            raise ValueError(f"unregistered error code {code!r}")
        self.stage = stage
        self.code = code
        self.message = message
        self.artifact_dump = artifact_dump

    def to_json(self) -> dict:
        return {"stage": self.stage, "code": self.code, "message": self.message,
                "artifact_dump": self.artifact_dump}

    @classmethod
    def from_json(cls, data: dict) -> "ErrorReport":
        return cls(data["stage"], data["code"], data["message"], data.get("artifact_dump"))

    @classmethod
    def from_exception(cls, stage: str, exc: Exception) -> "ErrorReport":
        code = exc.code if isinstance(exc, UniPilotError) else "STAGE_FAILED"
        return cls(stage, code, str(exc))


def _collect_codes() -> frozenset[str]:
    codes = set()
    stack = [UniPilotError]
    while stack:
        cls = stack.pop()
        codes.add(cls.code)
        stack.extend(cls.__subclasses__())
    return frozenset(codes)


#: Closed registry of error codes the explainer accepts.
ERROR_CODES = _collect_codes()


def is_registered(code: str) -> bool:
    return code in ERROR_CODES
