"""Runtime configuration: endpoints, thresholds, paths.

Config is a plain dataclass loadable from YAML. String values of the form
``${ENV_VAR}`` are expanded from the environment at load time (used for API
keys so they never have to live in the file).
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from sagemem.gateway import ModelEndpoint, TeacherSpec

_ASSET_DIR = Path(__file__).parent / "assets"

DEFAULT_SIMILARITY_THRESHOLD = 0.80
DEFAULT_OVERLAP_THRESHOLD = 0.85
DEFAULT_POOL_CAP = 15
DEFAULT_CHUNK_TOP_K = 8


class ConfigError(ValueError):
    """Configuration failed validation (bad threshold, missing path, ...)."""


def default_taxonomy_path() -> Path:
    return _ASSET_DIR / "taxonomy.json"


def default_prompts_dir() -> Path:
    return _ASSET_DIR / "prompts"


_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def _expand_env(value: str) -> str:
    def sub(match: re.Match[str]) -> str:
        return os.environ.get(match.group(1), "")

    return _ENV_RE.sub(sub, value)


def _endpoint_from(obj: Mapping[str, Any], label: str) -> ModelEndpoint:
    if not isinstance(obj, Mapping):
        raise ConfigError(f"{label} endpoint must be a mapping, got {type(obj).__name__}")
    try:
        return ModelEndpoint(
            base_url=str(obj["base_url"]),
            model_id=str(obj["model_id"]),
            api_key=_expand_env(str(obj.get("api_key", ""))),
            temperature=float(obj.get("temperature", 0.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"{label} endpoint is missing required key {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{label} endpoint: {exc}") from exc


@dataclass
class Config:
    """Everything the system needs to run, with desk-scale defaults."""

    local: ModelEndpoint
    embedder: ModelEndpoint
    judge: ModelEndpoint
    default_teacher: ModelEndpoint
    teachers: list[TeacherSpec] = field(default_factory=list)

    similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD
    overlap_threshold: float = DEFAULT_OVERLAP_THRESHOLD
    pool_cap: int = DEFAULT_POOL_CAP
    retrieval_mode: str = "section"
    generation_mode: str = "suppress"
    chunk_top_k: int = DEFAULT_CHUNK_TOP_K

    taxonomy_path: Path = field(default_factory=default_taxonomy_path)
    prompts_dir: Path = field(default_factory=default_prompts_dir)
    db_path: Path = Path("sagemem.db")
    vector_path: Path = Path("sagemem.vectors")

    port: int = 8080
    consolidation_policy: str = "reject"  # or "queue"
    console_dir: Path | None = None

    def validate(self) -> None:
        for name, value in (
            ("similarity_threshold", self.similarity_threshold),
            ("overlap_threshold", self.overlap_threshold),
        ):
            if not (0.0 <= value <= 1.0):
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        if self.pool_cap < 1:
            raise ConfigError(f"pool_cap must be >= 1, got {self.pool_cap}")
        if self.chunk_top_k < 1:
            raise ConfigError(f"chunk_top_k must be >= 1, got {self.chunk_top_k}")
        if self.retrieval_mode not in ("section", "chunk"):
            raise ConfigError(f"retrieval_mode must be 'section' or 'chunk', got {self.retrieval_mode!r}")
        if self.generation_mode not in ("suppress", "augment"):
            raise ConfigError(f"generation_mode must be 'suppress' or 'augment', got {self.generation_mode!r}")
        if self.consolidation_policy not in ("reject", "queue"):
            raise ConfigError(f"consolidation_policy must be 'reject' or 'queue', got {self.consolidation_policy!r}")
        if not Path(self.taxonomy_path).exists():
            raise ConfigError(f"taxonomy file not found: {self.taxonomy_path}")
        if not Path(self.prompts_dir).is_dir():
            raise ConfigError(f"prompts directory not found: {self.prompts_dir}")


def load_config(path: str | Path) -> Config:
    """Read a YAML config file, expand env vars, validate, return a Config."""
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, Mapping):
        raise ConfigError("config file must hold a YAML mapping at the top level")

    endpoints = data.get("endpoints", {})
    if not isinstance(endpoints, Mapping):
        raise ConfigError("'endpoints' must be a mapping")
    for required in ("local", "embedder", "judge", "default_teacher"):
        if required not in endpoints:
            raise ConfigError(f"endpoints.{required} is required")

    teachers: list[TeacherSpec] = []
    for i, entry in enumerate(data.get("teachers", []) or []):
        if not isinstance(entry, Mapping):
            raise ConfigError(f"teachers[{i}] must be a mapping")
        categories = entry.get("categories", [])
        if not isinstance(categories, list):
            raise ConfigError(f"teachers[{i}].categories must be a list")
        teachers.append(
            TeacherSpec(
                endpoint=_endpoint_from(entry, f"teachers[{i}]"),
                categories=tuple(str(c) for c in categories),
            )
        )

    kwargs: dict[str, Any] = dict(
        local=_endpoint_from(endpoints["local"], "local"),
        embedder=_endpoint_from(endpoints["embedder"], "embedder"),
        judge=_endpoint_from(endpoints["judge"], "judge"),
        default_teacher=_endpoint_from(endpoints["default_teacher"], "default_teacher"),
        teachers=teachers,
    )

    scalars = (
        "similarity_threshold",
        "overlap_threshold",
        "pool_cap",
        "retrieval_mode",
        "generation_mode",
        "chunk_top_k",
        "port",
        "consolidation_policy",
    )
    for key in scalars:
        if key in data:
            kwargs[key] = data[key]
    for key in ("taxonomy_path", "prompts_dir", "db_path", "vector_path", "console_dir"):
        if key in data and data[key] is not None:
            kwargs[key] = Path(str(data[key]))

    config = Config(**kwargs)
    config.validate()
    return config
