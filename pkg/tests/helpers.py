"""Fixture builders shared across test modules."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from rankcot.gateway import MockRule, MockScript
from rankcot.types import ScoredDocument

N_DOCS_PER_QUERY = 10
# docs whose reflected CoT contains the gold answer in "mixed" queries
MIXED_POSITIVE_DOCS = (2, 5, 7)


def scored(doc_id: str, text: str, rank: int, score: float | None = None, title=None) -> ScoredDocument:
    return ScoredDocument(doc_id, text, score if score is not None else 10.0 - rank, rank, title=title)


def gold(i: int) -> str:
    return f"gold{i:02d}x"


def doc_marker(i: int, j: int) -> str:
    return f"m{i:02d}d{j}"


@dataclass
class DpoFixture:
    root: Path
    corpus: Path
    queries: Path
    script: Path
    config: Path
    n_queries: int
    all_positive: tuple[int, ...]
    all_negative: tuple[int, ...]

    @property
    def n_expected_pairs(self) -> int:
        return self.n_queries - len(self.all_positive) - len(self.all_negative)


def positive_docs(i: int, all_positive, all_negative) -> set[int]:
    if i in all_positive:
        return set(range(N_DOCS_PER_QUERY))
    if i in all_negative:
        return set()
    return set(MIXED_POSITIVE_DOCS)


def write_dpo_fixture(
    root: Path,
    n_queries: int = 30,
    all_positive=(0, 1, 2),
    all_negative=(3, 4, 5),
    extra_config: str = "",
) -> DpoFixture:
    """Corpus, queries, mock script and config for a scripted preference run.

    Query ``i`` has ten documents mentioning ``topicNN``; each document's CoT
    is scripted, and its reflection contains the gold answer only for the
    documents in :func:`positive_docs`.
    """
    root.mkdir(parents=True, exist_ok=True)
    docs, queries, rules = [], [], []
    for i in range(n_queries):
        queries.append({
            "query_id": f"q{i:02d}",
            "question": f"Which value belongs to topic{i:02d}?",
            "answers": [gold(i)],
            "task": "open_qa",
            "dataset": "nq" if i % 2 == 0 else "tqa",
        })
        pos = positive_docs(i, all_positive, all_negative)
        for j in range(N_DOCS_PER_QUERY):
            marker = doc_marker(i, j)
            text = f"Passage on topic{i:02d} with marker {marker}."
            if j in pos:
                text += f" It mentions {gold(i)}."
            docs.append({"doc_id": f"q{i:02d}-d{j}", "title": None, "text": text})
            reflection = f"The answer is {gold(i)}." if j in pos else "The answer is unclear."
            rules.append(MockRule(f"cot {marker} reasoning", (reflection,)))
    for i in range(n_queries):
        for j in range(N_DOCS_PER_QUERY):
            marker = doc_marker(i, j)
            rules.append(MockRule(f"marker {marker}.", (f"According to the document, cot {marker} reasoning.",)))
    rules.append(MockRule("Reply with YES or NO", ("YES", "NO")))
    rules.append(MockRule("concise summary", ("Summary of the relevant passages.",)))
    script = MockScript(rules, default="I do not know.")

    corpus_path = root / "corpus.jsonl"
    corpus_path.write_text("".join(json.dumps(d) + "\n" for d in docs))
    queries_path = root / "queries.jsonl"
    queries_path.write_text("".join(json.dumps(q) + "\n" for q in queries))
    script_path = root / "mock_script.json"
    script_path.write_text(json.dumps(script.to_dict()))
    config_path = root / "config.toml"
    config_path.write_text(
        f"""
corpus_path = "corpus.jsonl"
queries_path = "queries.jsonl"
cache_dir = "cache"
out_dir = "out"
seed = 13
max_inflight = 4

[backend]
kind = "mock"
model = "mock-model"
mock_script = "mock_script.json"

[retrieval]
kind = "bm25"
k = 10
context_m = 5

[evaluation]
dataset_metric_map = {{ nq = "accuracy", tqa = "accuracy" }}
{extra_config}
"""
    )
    return DpoFixture(root, corpus_path, queries_path, script_path, config_path, n_queries,
                      tuple(all_positive), tuple(all_negative))


def write_qa_fixture(root: Path, n_queries: int = 8, fail_query: int | None = None, **kwargs) -> DpoFixture:
    """The preference fixture plus scripted final answers.

    Closed-book answers are right for even queries; answers with context are
    right unless the query index is a multiple of three. ``fail_query`` makes
    that query's answer call raise a backend error.
    """
    fx = write_dpo_fixture(root, n_queries=n_queries, **kwargs)
    base = MockScript.load(fx.script)
    rules = []
    for i in range(n_queries):
        question = f"Which value belongs to topic{i:02d}?"
        if i == fail_query:
            rules.append(MockRule(f"{question}\n\nAnswer the question briefly.", error="injected failure"))
            continue
        rules.append(MockRule(f"own knowledge.\n\nQuestion: {question}",
                              (gold(i) if i % 2 == 0 else "no idea",)))
        rules.append(MockRule(f"{question}\n\nAnswer the question briefly.",
                              ("unknown" if i % 3 == 0 else f"It is {gold(i)}.",)))
    script = MockScript(rules + base.rules, base.default)
    fx.script.write_text(json.dumps(script.to_dict()))
    return fx
