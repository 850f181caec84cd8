"""Pipeline configuration: a JSON document whose values command-line flags may override."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .errors import BadConfig, IoFailure, ValidationError
from .grpo import GrpoConfig
from .kg import DEFAULT_ALIGN_THRESHOLD
from .reasoning import DEFAULT_ANCHOR_THRESHOLD, DEFAULT_MAX_COST
from .rewards import DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_EPSILON
from .services import LlmClient, Role
from .synthesis import GENERATION_TEMPLATES

_SERVICE_KEYS = {"endpoint", "model", "timeout", "max_inflight"}
_GRPO_KEYS = {"group_size": "group_size", "clip_eps": "clip_eps", "kl_coef": "kl_coef", "sigma_tol": "sigma_tol"}


@dataclass(frozen=True)
class PipelineConfig:
    graph: str | None = None
    graph_a: str | None = None
    graph_b: str | None = None
    align_threshold: float = DEFAULT_ALIGN_THRESHOLD
    anchor_threshold: float = DEFAULT_ANCHOR_THRESHOLD
    priority: dict[str, float] = field(default_factory=dict)
    max_cost: float = DEFAULT_MAX_COST
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    epsilon: float = DEFAULT_EPSILON
    grpo: dict[str, Any] = field(default_factory=dict)
    services: dict[str, dict[str, Any]] = field(default_factory=dict)
    template: str = "Option1"
    abbreviations: tuple[str, ...] | None = None
    mock: bool = False
    seed: int = 7
    jobs: int = 1

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        for key in ("align_threshold", "anchor_threshold"):
            v = getattr(self, key)
            if not _real(v) or not 0.0 < v <= 1.0:
                raise BadConfig(f"{key} must lie in (0, 1], got {v!r}")
        if not _real(self.alpha) or self.alpha < 0:
            raise BadConfig(f"alpha must be >= 0, got {self.alpha!r}")
        if not _real(self.beta) or not 0.0 <= self.beta <= 1.0:
            raise BadConfig(f"beta must lie in [0, 1], got {self.beta!r}")
        if not _real(self.epsilon) or self.epsilon <= 0:
            raise BadConfig(f"epsilon must be > 0, got {self.epsilon!r}")
        if not _real(self.max_cost) or self.max_cost < 0:
            raise BadConfig(f"max_cost must be >= 0, got {self.max_cost!r}")
        if not isinstance(self.priority, dict):
            raise BadConfig("priority must be an object mapping relation to multiplier")
        for rel, mult in self.priority.items():
            if not _real(mult) or mult <= 0:
                raise BadConfig(f"priority.{rel} must be > 0, got {mult!r}")
        if self.template not in GENERATION_TEMPLATES:
            raise BadConfig(f"template must be one of {sorted(GENERATION_TEMPLATES)}, got {self.template!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise BadConfig(f"seed must be an integer, got {self.seed!r}")
        if not isinstance(self.jobs, int) or self.jobs < 1:
            raise BadConfig(f"jobs must be an integer >= 1, got {self.jobs!r}")
        for k in self.grpo:
            if k not in _GRPO_KEYS:
                raise BadConfig(f"unknown key grpo.{k}")
        self.grpo_config()
        for role, svc in self.services.items():
            if role not in {r.value for r in Role}:
                raise BadConfig(f"unknown service role services.{role}")
            if not isinstance(svc, dict):
                raise BadConfig(f"services.{role} must be an object")
            for k in svc:
                if k not in _SERVICE_KEYS:
                    raise BadConfig(f"unknown key services.{role}.{k}")
            if "max_inflight" in svc and (not isinstance(svc["max_inflight"], int) or svc["max_inflight"] < 1):
                raise BadConfig(f"services.{role}.max_inflight must be an integer >= 1")
            if "timeout" in svc and (not _real(svc["timeout"]) or svc["timeout"] <= 0):
                raise BadConfig(f"services.{role}.timeout must be > 0")

    def grpo_config(self) -> GrpoConfig:
        try:
            return GrpoConfig(**{_GRPO_KEYS[k]: v for k, v in self.grpo.items()})
        except (BadConfig, TypeError) as exc:
            raise BadConfig(f"grpo: {exc}") from exc

    def client(self, role: Role | str) -> LlmClient:
        role = Role(role)
        svc = self.services.get(role.value, {})
        kw = {
            "model_name": svc.get("model", "mock"),
            "timeout": float(svc.get("timeout", 30.0)),
            "max_inflight": int(svc.get("max_inflight", 4)),
        }
        if self.mock:
            return LlmClient.mocked(role, **kw)
        if not svc.get("endpoint"):
            raise BadConfig(f"services.{role.value}.endpoint is required unless --mock is given")
        try:
            return LlmClient(role=role, endpoint=str(svc["endpoint"]), **kw)
        except ValidationError as exc:
            raise BadConfig(f"services.{role.value}: {exc}") from exc

    def override(self, **values: Any) -> "PipelineConfig":
        """Copy with every non-None value replaced."""
        changes = {k: v for k, v in values.items() if v is not None}
        return replace(self, **changes) if changes else self


def _real(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def config_from_dict(doc: Mapping[str, Any]) -> PipelineConfig:
    if not isinstance(doc, Mapping):
        raise BadConfig("config must be a JSON object")
    known = {f.name for f in fields(PipelineConfig)}
    for k in doc:
        if k not in known:
            raise BadConfig(f"unknown config key {k!r}")
    values = dict(doc)
    if values.get("abbreviations") is not None:
        if not isinstance(values["abbreviations"], list):
            raise BadConfig("abbreviations must be a list of strings")
        values["abbreviations"] = tuple(values["abbreviations"])
    for k in ("priority", "grpo", "services"):
        if k in values and not isinstance(values[k], dict):
            raise BadConfig(f"{k} must be a JSON object")
    return PipelineConfig(**values)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BadConfig(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)
