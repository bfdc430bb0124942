"""Per-command provenance: input/output digests, stage counts and timings."""

from __future__ import annotations

import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from rankcot.io import file_digest, write_json


@dataclass
class RunManifest:
    command: str
    config_digest: str
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    stages: dict[str, dict] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=dict)
    gateway: dict[str, int] = field(default_factory=dict)
    status: str = "ok"

    def add_input(self, path: str | os.PathLike) -> None:
        path = Path(path)
        if path.is_file():
            self.inputs[str(path)] = file_digest(path)

    def add_output(self, path: str | os.PathLike) -> None:
        path = Path(path)
        self.outputs[str(path)] = file_digest(path)

    def count(self, name: str, n: int = 1) -> None:
        self.counters[name] = self.counters.get(name, 0) + n

    @contextmanager
    def stage(self, name: str):
        entry = self.stages.setdefault(name, {"count": 0, "seconds": 0.0})
        start = time.perf_counter()
        try:
            yield entry
        finally:
            entry["seconds"] = round(entry["seconds"] + time.perf_counter() - start, 6)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "status": self.status,
            "config_digest": self.config_digest,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "stages": self.stages,
            "counters": self.counters,
            "gateway": self.gateway,
        }

    def write(self, out_dir: str | os.PathLike, name: str | None = None) -> Path:
        return write_json(Path(out_dir) / "manifests" / f"{name or self.command}.json", self.to_dict())
