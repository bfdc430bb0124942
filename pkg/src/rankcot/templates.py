"""Prompt templates for the refinement, reflection and answering calls.

A template set is a JSON object ``{name: {system, user, doc_separator}}``.
Slots use ``str.format`` syntax; only the slots listed in
:data:`REQUIRED_SLOTS` for each template are allowed, and all must appear.
"""

from __future__ import annotations

import json
import os
import string
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from rankcot.errors import ConfigError
from rankcot.types import ScoredDocument

REQUIRED_SLOTS: dict[str, frozenset[str]] = {
    "rerank": frozenset({"query", "document"}),
    "summary": frozenset({"query", "documents"}),
    "cot": frozenset({"query", "documents"}),
    "reflect": frozenset({"query", "cot"}),
    "answer_with_context": frozenset({"query", "documents"}),
    "answer_closed_book": frozenset({"query"}),
}
ALL_SLOTS = frozenset({"query", "documents", "document", "cot"})


def _slots(text: str) -> set[str]:
    try:
        return {field for _, field, _, _ in string.Formatter().parse(text) if field is not None}
    except ValueError as exc:
        raise ConfigError(f"bad template syntax: {exc}") from None


def render_document(doc: ScoredDocument) -> str:
    if doc.title:
        return f"[{doc.rank}] {doc.title}: {doc.text}"
    return f"[{doc.rank}] {doc.text}"


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    system: str
    user: str
    doc_separator: str = "\n\n"

    def __post_init__(self):
        if self.name not in REQUIRED_SLOTS:
            raise ConfigError(f"unknown template name {self.name!r}")
        found = _slots(self.system) | _slots(self.user)
        unknown = found - ALL_SLOTS
        if unknown:
            raise ConfigError(f"template {self.name!r} uses unknown slots {sorted(unknown)}")
        required = REQUIRED_SLOTS[self.name]
        if found != required:
            raise ConfigError(
                f"template {self.name!r} must use exactly slots {sorted(required)}, found {sorted(found)}"
            )

    def render_documents(self, docs: Sequence[ScoredDocument]) -> str:
        return self.doc_separator.join(render_document(d) for d in docs)

    def messages(self, **slots: str) -> list[dict]:
        required = REQUIRED_SLOTS[self.name]
        missing = required - slots.keys()
        if missing:
            raise ConfigError(f"template {self.name!r} missing values for {sorted(missing)}")
        values = {k: v for k, v in slots.items() if k in required}
        out = []
        if self.system:
            out.append({"role": "system", "content": self.system.format(**values)})
        out.append({"role": "user", "content": self.user.format(**values)})
        return out

    def render(self, **slots: str) -> str:
        """Flatten system and user turns into one prompt string."""
        return "\n\n".join(m["content"] for m in self.messages(**slots))


class TemplateSet(Mapping):
    def __init__(self, templates: Mapping[str, PromptTemplate]):
        self._templates = dict(templates)

    def __getitem__(self, name: str) -> PromptTemplate:
        try:
            return self._templates[name]
        except KeyError:
            raise ConfigError(f"template {name!r} is not configured") from None

    def __iter__(self):
        return iter(self._templates)

    def __len__(self):
        return len(self._templates)

    @classmethod
    def from_dict(cls, obj: Mapping) -> TemplateSet:
        templates = {}
        for name, body in obj.items():
            if not isinstance(body, Mapping) or "user" not in body:
                raise ConfigError(f"template {name!r} needs at least a 'user' field")
            templates[name] = PromptTemplate(
                name=name,
                system=body.get("system", ""),
                user=body["user"],
                doc_separator=body.get("doc_separator", "\n\n"),
            )
        return cls(templates)

    def to_dict(self) -> dict:
        return {
            name: {"system": t.system, "user": t.user, "doc_separator": t.doc_separator}
            for name, t in self._templates.items()
        }


def default_templates() -> TemplateSet:
    text = resources.files("rankcot").joinpath("data/templates.json").read_text(encoding="utf-8")
    return TemplateSet.from_dict(json.loads(text))


def load_templates(path: str | os.PathLike | None = None) -> TemplateSet:
    """Load a template file, falling back to the packaged defaults per missing name."""
    base = default_templates()
    if path is None:
        return base
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"templates file not found: {path}")
    try:
        overrides = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
    merged = {**base.to_dict(), **overrides}
    return TemplateSet.from_dict(merged)
