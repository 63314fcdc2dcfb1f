"""Conversational AutoML pipeline engine.

Stages run under a checkpointed session state machine; model selection is
embedding retrieval over model cards; planning outputs are schema-validated;
training runs a reproducible hyperparameter search against pluggable
executors; a two-phase guard-line filters inputs and censors outputs.
"""

__version__ = "0.1.0"

from .config import EngineConfig
from .pipeline import Engine, SessionRuntime
from .session import SessionState, Stage, Status

__all__ = ["Engine", "EngineConfig", "SessionRuntime", "SessionState",
           "Stage", "Status", "__version__"]
