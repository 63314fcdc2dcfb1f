"""Engine configuration: one JSON file drives providers, search, and service."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

CONFIG_ENV = "UNIPILOT_CONFIG"


@dataclass
class EngineConfig:
    store_dir: str = "sessions"
    cards_dir: str = "cards"
    prompts_dir: str | None = None
    task_catalog_path: str | None = None
    interactive: bool = False

    # providers
    chat_provider: str = "scripted"  # scripted | remote
    script_path: str | None = None
    script_strict: bool = False
    remote_base_url: str = ""
    remote_model: str = ""
    embedder: str = "local"  # local | remote
    embedder_dim: int = 256
    embedder_base_url: str = ""
    embedder_model: str = ""

    # gateway budgets
    transport_retries: int = 3
    backoff_base_ms: int = 250
    structured_attempts: int = 2
    max_output_tokens: int = 2048

    # guard-line
    guard_max_rounds: int = 3

    # hyperparameter search
    budget: int = 20
    strategy: str = "random"  # grid | random
    seed: int = 0
    executor: str = "mock"  # mock | subprocess
    executor_command: str = ""
    executor_workdir: str = ""
    mock_optimum: dict = field(default_factory=dict)
    mock_step_sleep_s: float = 0.0  # real pause per mock step; steering window

    # service
    host: str = "127.0.0.1"
    port: int = 8777
    console_dir: str = ""  # static web-console assets to host under /console

    # auto: logical for scripted chat provider, wall otherwise
    clock: str = "auto"

    def __post_init__(self):
        if self.chat_provider not in ("scripted", "remote"):
            raise ConfigError(f"unknown chat provider {self.chat_provider!r}")
        if self.chat_provider == "scripted" and not self.script_path:
            raise ConfigError("scripted chat provider needs script_path")
        if self.chat_provider == "remote" and not self.remote_base_url:
            raise ConfigError("remote chat provider needs remote_base_url")
        if self.embedder not in ("local", "remote"):
            raise ConfigError(f"unknown embedder {self.embedder!r}")
        if self.strategy not in ("grid", "random"):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.executor not in ("mock", "subprocess"):
            raise ConfigError(f"unknown executor {self.executor!r}")
        if self.executor == "subprocess" and not self.executor_command:
            raise ConfigError("subprocess executor needs executor_command")
        if self.clock not in ("auto", "logical", "wall"):
            raise ConfigError(f"unknown clock {self.clock!r}")
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")

    @property
    def use_logical_clock(self) -> bool:
        if self.clock == "auto":
            return self.chat_provider == "scripted"
        return self.clock == "logical"

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_json(cls, data: dict) -> "EngineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(data.keys() - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "EngineConfig":
        """Read the config file named by `path` or $UNIPILOT_CONFIG."""
        if path is None:
            path = os.environ.get(CONFIG_ENV)
        if path is None:
            raise ConfigError(f"no config path given and {CONFIG_ENV} unset")
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        return cls.from_json(data)
