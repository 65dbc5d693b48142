"""Pipeline configuration loaded from JSON. Unknown keys are rejected."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .completeness import CompletenessWeights, RoutingThresholds
from .errors import ConfigError
from .index import Bm25Params

POLICIES = ("adaptive", "always", "never")


@dataclass(frozen=True)
class RetrievalConfig:
    m: int = 5
    k: int = 3
    max_chunk_chars: int = 256
    bm25: Bm25Params = field(default_factory=Bm25Params)

    def __post_init__(self) -> None:
        if self.m < 1 or self.k < 1:
            raise ConfigError("retrieval.m and retrieval.k must be >= 1")
        if self.max_chunk_chars < 32:
            raise ConfigError("retrieval.max_chunk_chars must be >= 32")


@dataclass(frozen=True)
class LlmConfig:
    backend: str = "mock"
    endpoint: str | None = None
    model: str = ""
    api_key_env: str = "LLM_API_KEY"
    timeout_ms: int = 30000
    max_retries: int = 2
    max_concurrent_llm: int = 4
    temperature: float = 0.0
    max_tokens: int = 512
    mock_rules: str | None = None
    mock_default: str | None = None

    def __post_init__(self) -> None:
        if self.backend not in ("mock", "http"):
            raise ConfigError(f"llm.backend must be 'mock' or 'http', got {self.backend!r}")
        if self.backend == "http" and not self.endpoint:
            raise ConfigError("llm.endpoint is required for the http backend")
        if self.timeout_ms <= 0 or self.max_retries < 0 or self.max_concurrent_llm < 1:
            raise ConfigError("llm.timeout_ms > 0, llm.max_retries >= 0 and llm.max_concurrent_llm >= 1 required")
        if self.temperature < 0 or self.max_tokens < 1:
            raise ConfigError("llm.temperature >= 0 and llm.max_tokens >= 1 required")


@dataclass(frozen=True)
class TemplatePaths:
    diag: str | None = None
    diff: str | None = None
    rag: str | None = None


@dataclass(frozen=True)
class ClassifierConfig:
    remote_endpoint: str | None = None
    timeout_s: float = 10.0


@dataclass(frozen=True)
class Toggles:
    decision_enabled: bool = True
    chunking_enabled: bool = True
    mapping_rerank_enabled: bool = True
    diff_filter_enabled: bool = True


@dataclass(frozen=True)
class PipelineConfig:
    weights: CompletenessWeights = field(default_factory=CompletenessWeights)
    thresholds: RoutingThresholds = field(default_factory=RoutingThresholds)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    llm: LlmConfig = field(default_factory=LlmConfig)
    templates: TemplatePaths = field(default_factory=TemplatePaths)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    toggles: Toggles = field(default_factory=Toggles)
    policy: str = "adaptive"
    max_unit_chars: int = 512
    workers: int = 4

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def effective_policy(self) -> str:
        return "always" if not self.toggles.decision_enabled else self.policy

    def replace(self, **changes: Any) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def with_toggles(self, **changes: bool) -> "PipelineConfig":
        return dataclasses.replace(self, toggles=dataclasses.replace(self.toggles, **changes))

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _build(cls: type, data: Any, where: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value, f"{where}.{key}" if where else key)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def config_from_dict(data: dict[str, Any]) -> PipelineConfig:
    return _build(PipelineConfig, data, "")


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)
