"""Run configuration: TOML file, ``--set key=value`` overrides, environment."""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from rankcot.errors import ConfigError
from rankcot.io import canonical_json, sha256_hex

CACHE_DIR_ENV = "FORGE_CACHE_DIR"


@dataclass
class BackendConfig:
    kind: str = "mock"
    base_url: str = ""
    model: str = "mock-model"
    mock_script: str | None = None
    max_tokens: int = 512
    timeout: float = 60.0
    max_retries: int = 4


@dataclass
class RetrievalConfig:
    kind: str = "bm25"
    k: int = 10
    context_m: int = 5
    endpoint: str = ""
    k1: float = 1.2
    b: float = 0.75
    index_path: str | None = None


@dataclass
class SamplingConfig:
    cot_temperature: float = 0.8
    n_per_doc: int = 1
    answer_temperature: float = 0.0
    consistency_temperature: float = 1.0
    consistency_samples: int = 300


@dataclass
class DpoConfig:
    beta: float = 0.1


@dataclass
class EvaluationConfig:
    dataset_metric_map: dict = field(default_factory=dict)
    length_baseline: str = "none"
    embedder: str = "hashing"
    embed_base_url: str = ""
    embed_model: str = ""


@dataclass
class RunConfig:
    corpus_path: str | None = None
    queries_path: str | None = None
    templates_path: str | None = None
    cache_dir: str | None = None
    out_dir: str = "out"
    seed: int = 0
    max_inflight: int = 8
    backend: BackendConfig = field(default_factory=BackendConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    dpo: DpoConfig = field(default_factory=DpoConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def validate(self) -> RunConfig:
        if self.backend.kind not in ("mock", "openai_compatible"):
            raise ConfigError(f"backend.kind must be mock or openai_compatible, got {self.backend.kind!r}")
        if self.retrieval.kind not in ("bm25", "remote"):
            raise ConfigError(f"retrieval.kind must be bm25 or remote, got {self.retrieval.kind!r}")
        if self.retrieval.k < 1 or self.retrieval.context_m < 1:
            raise ConfigError("retrieval.k and retrieval.context_m must be >= 1")
        if self.retrieval.context_m > self.retrieval.k:
            raise ConfigError("retrieval.context_m must not exceed retrieval.k")
        if self.dpo.beta <= 0:
            raise ConfigError("dpo.beta must be > 0")
        if self.max_inflight < 1:
            raise ConfigError("max_inflight must be >= 1")
        if self.sampling.n_per_doc < 1:
            raise ConfigError("sampling.n_per_doc must be >= 1")
        return self

    @property
    def index_path(self) -> Path:
        if self.retrieval.index_path:
            return Path(self.retrieval.index_path)
        return Path(self.out_dir) / "index.json"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self, templates_digest: str = "") -> str:
        """Hash of the experimental settings; file locations are left out."""
        d = self.to_dict()
        for key in ("corpus_path", "queries_path", "templates_path", "cache_dir", "out_dir"):
            d.pop(key)
        d["retrieval"].pop("index_path")
        d["backend"].pop("mock_script")
        d["templates_digest"] = templates_digest
        return sha256_hex(canonical_json(d))


_SECTIONS = {
    "backend": BackendConfig,
    "retrieval": RetrievalConfig,
    "sampling": SamplingConfig,
    "dpo": DpoConfig,
    "evaluation": EvaluationConfig,
}
_PATH_KEYS = {
    ("corpus_path",), ("queries_path",), ("templates_path",), ("cache_dir",), ("out_dir",),
    ("backend", "mock_script"), ("retrieval", "index_path"),
}


def _coerce(cls, data: dict, where: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown config keys in {where}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        default = getattr(cls(), key) if key not in _SECTIONS else None
        if key in _SECTIONS and cls is RunConfig:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table")
            kwargs[key] = _coerce(_SECTIONS[key], value, key)
            continue
        if isinstance(default, bool) or default is None or isinstance(default, (str, dict)):
            kwargs[key] = value
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{where}.{key} must be an integer, got {value!r}")
            kwargs[key] = value
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where}.{key} must be a number, got {value!r}")
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def parse_value(text: str) -> Any:
    """Parse an override as a TOML value, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(data: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, value = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"empty key in --set {assignment!r}")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {part} is not a table")
    node[parts[-1]] = parse_value(value.strip())


def _resolve_paths(data: dict, base: Path) -> None:
    for key_path in _PATH_KEYS:
        node = data
        for part in key_path[:-1]:
            node = node.get(part) if isinstance(node, dict) else None
            if node is None:
                break
        if isinstance(node, dict) and isinstance(node.get(key_path[-1]), str):
            p = Path(node[key_path[-1]])
            if not p.is_absolute():
                node[key_path[-1]] = str(base / p)


def load_config(
    path: str | os.PathLike | None = None,
    overrides: list[str] | tuple[str, ...] = (),
    env: dict | None = None,
) -> RunConfig:
    """Precedence: ``--set`` flag > environment > file > default.

    Relative paths in the file resolve against the file's directory; relative
    paths given with ``--set`` resolve against the working directory.
    """
    env = os.environ if env is None else env
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        _resolve_paths(data, path.parent.resolve())
    if env.get(CACHE_DIR_ENV):
        data["cache_dir"] = env[CACHE_DIR_ENV]
    for assignment in overrides:
        apply_override(data, assignment)
    return _coerce(RunConfig, data, "config").validate()
