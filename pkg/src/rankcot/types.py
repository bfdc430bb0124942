"""Record types passed between pipeline stages, with their JSON shapes."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any

from rankcot.errors import InputError
from rankcot.text import normalize_answer

TASKS = ("open_qa", "reasoning", "long_form")
REFINEMENT_METHODS = ("none", "rerank", "summary", "rankcot")
GENERATION_METHODS = REFINEMENT_METHODS + ("closed_book",)


def _require(obj: dict, key: str, where: str) -> Any:
    try:
        return obj[key]
    except KeyError:
        raise InputError(f"{where}: missing field {key!r}") from None


@dataclass(frozen=True)
class CorpusDocument:
    doc_id: str
    text: str
    title: str | None = None

    def __post_init__(self):
        if not self.doc_id:
            raise InputError("document with empty doc_id")
        if not self.text or not self.text.strip():
            raise InputError(f"document {self.doc_id!r} has empty text")

    @classmethod
    def from_dict(cls, obj: dict) -> CorpusDocument:
        return cls(
            doc_id=str(_require(obj, "doc_id", "corpus")),
            text=_require(obj, "text", "corpus"),
            title=obj.get("title"),
        )

    def to_dict(self) -> dict:
        return {"doc_id": self.doc_id, "title": self.title, "text": self.text}


@dataclass(frozen=True)
class ScoredDocument:
    doc_id: str
    text: str
    score: float
    rank: int
    title: str | None = None
    source: str = "bm25"

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise InputError(f"non-finite score for {self.doc_id!r}")
        if self.rank < 1:
            raise InputError(f"rank must be >= 1, got {self.rank}")

    @classmethod
    def from_dict(cls, obj: dict) -> ScoredDocument:
        return cls(
            doc_id=str(obj["doc_id"]),
            text=obj["text"],
            score=float(obj["score"]),
            rank=int(obj["rank"]),
            title=obj.get("title"),
            source=obj.get("source", "bm25"),
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class QueryRecord:
    """A question with its gold answer aliases.

    ``short_answers`` holds alias sets for long-form String-EM scoring; when
    absent every gold alias counts as its own set. ``dataset`` groups queries
    in evaluation reports.
    """

    query_id: str
    question: str
    gold_answers: tuple[str, ...]
    task: str = "open_qa"
    dataset: str = "default"
    short_answers: tuple[tuple[str, ...], ...] | None = None

    def __post_init__(self):
        if not self.question or not self.question.strip():
            raise InputError(f"query {self.query_id!r} has an empty question")
        if not self.gold_answers:
            raise InputError(f"query {self.query_id!r} has no gold answers")
        for alias in self.gold_answers:
            if not normalize_answer(alias):
                raise InputError(
                    f"query {self.query_id!r}: gold answer {alias!r} is empty after normalization"
                )
        if self.task not in TASKS:
            raise InputError(f"query {self.query_id!r}: unknown task {self.task!r}")

    @classmethod
    def from_dict(cls, obj: dict) -> QueryRecord:
        answers = _require(obj, "answers", "queries")
        if isinstance(answers, str):
            answers = [answers]
        short = obj.get("short_answers")
        return cls(
            query_id=str(_require(obj, "query_id", "queries")),
            question=_require(obj, "question", "queries"),
            gold_answers=tuple(answers),
            task=obj.get("task", "open_qa"),
            dataset=obj.get("dataset", "default"),
            short_answers=tuple(tuple(s) for s in short) if short else None,
        )

    def to_dict(self) -> dict:
        out = {
            "query_id": self.query_id,
            "question": self.question,
            "answers": list(self.gold_answers),
            "task": self.task,
            "dataset": self.dataset,
        }
        if self.short_answers is not None:
            out["short_answers"] = [list(s) for s in self.short_answers]
        return out

    @property
    def answer_sets(self) -> list[list[str]]:
        if self.short_answers:
            return [list(s) for s in self.short_answers]
        return [[g] for g in self.gold_answers]


@dataclass(frozen=True)
class RefinementOutput:
    method: str
    query_id: str
    text: str
    char_len: int = -1
    kept_doc_ids: tuple[str, ...] | None = None
    context_doc_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.method not in REFINEMENT_METHODS:
            raise InputError(f"unknown refinement method {self.method!r}")
        if self.char_len == -1:
            object.__setattr__(self, "char_len", len(self.text))
        elif self.char_len != len(self.text):
            raise InputError(
                f"{self.query_id}: char_len {self.char_len} != len(text) {len(self.text)}"
            )

    @classmethod
    def from_dict(cls, obj: dict) -> RefinementOutput:
        kept = obj.get("kept_doc_ids")
        return cls(
            method=obj["method"],
            query_id=str(obj["query_id"]),
            text=obj["text"],
            char_len=int(obj.get("char_len", -1)),
            kept_doc_ids=tuple(kept) if kept is not None else None,
            context_doc_ids=tuple(obj.get("context_doc_ids", ())),
        )

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "query_id": self.query_id,
            "text": self.text,
            "char_len": self.char_len,
            "context_doc_ids": list(self.context_doc_ids),
        }
        if self.kept_doc_ids is not None:
            out["kept_doc_ids"] = list(self.kept_doc_ids)
        return out


@dataclass
class GenerationRecord:
    query_id: str
    method: str
    answer: str
    refinement_text: str = ""
    refinement_len: int = -1
    correct: bool | None = None
    empty_context: bool = False
    prompt_chars: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in GENERATION_METHODS:
            raise InputError(f"unknown generation method {self.method!r}")
        if self.refinement_len == -1:
            self.refinement_len = len(self.refinement_text)
        elif self.refinement_len != len(self.refinement_text):
            raise InputError(f"{self.query_id}: refinement_len does not match refinement_text")

    @classmethod
    def from_dict(cls, obj: dict) -> GenerationRecord:
        return cls(
            query_id=str(obj["query_id"]),
            method=obj["method"],
            answer=obj["answer"],
            refinement_text=obj.get("refinement_text", ""),
            refinement_len=int(obj.get("refinement_len", -1)),
            correct=obj.get("correct"),
            empty_context=bool(obj.get("empty_context", False)),
            prompt_chars=int(obj.get("prompt_chars", 0)),
            extra=dict(obj.get("extra", {})),
        )

    def to_dict(self) -> dict:
        return asdict(self)
