"""Has-Answer / Miss-Answer partition and the Internal-Knowledge subset."""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

from rankcot.errors import InputError
from rankcot.evaluation.metrics import accuracy
from rankcot.text import contains_answer
from rankcot.types import GenerationRecord, QueryRecord, ScoredDocument

HAS_ANSWER = "has_answer"
MISS_ANSWER = "miss_answer"
INTERNAL = "internal_knowledge"
SCENARIOS = ("all", HAS_ANSWER, MISS_ANSWER, INTERNAL)


@dataclass(frozen=True)
class ScenarioAssignment:
    partition: dict[str, str]
    internal_knowledge: frozenset[str]

    def members(self, scenario: str) -> set[str]:
        if scenario == "all":
            return set(self.partition)
        if scenario == INTERNAL:
            return set(self.internal_knowledge)
        if scenario in (HAS_ANSWER, MISS_ANSWER):
            return {q for q, s in self.partition.items() if s == scenario}
        raise InputError(f"unknown scenario {scenario!r}")

    def to_dict(self) -> dict:
        return {
            "partition": dict(sorted(self.partition.items())),
            "internal_knowledge": sorted(self.internal_knowledge),
        }


def assign_scenarios(
    queries: Iterable[QueryRecord],
    retrieved_docs: Mapping[str, Sequence[ScoredDocument]],
    closed_book_records: Iterable[GenerationRecord] | Mapping[str, GenerationRecord],
    m: int = 5,
) -> ScenarioAssignment:
    """Has-Answer iff any of the top-``m`` documents contains a gold alias.

    Internal-Knowledge iff the closed-book answer is correct. The two are
    independent: a query can be both Miss-Answer and Internal-Knowledge.
    """
    if isinstance(closed_book_records, Mapping):
        closed = dict(closed_book_records)
    else:
        closed = {r.query_id: r for r in closed_book_records}
    partition: dict[str, str] = {}
    internal = set()
    for q in queries:
        if q.query_id not in closed:
            raise InputError(f"missing closed-book record for query {q.query_id!r}")
        docs = sorted(retrieved_docs.get(q.query_id, ()), key=lambda d: d.rank)[:m]
        has = any(contains_answer(d.text, q.gold_answers) for d in docs)
        partition[q.query_id] = HAS_ANSWER if has else MISS_ANSWER
        if accuracy(closed[q.query_id].answer, q.gold_answers):
            internal.add(q.query_id)
    return ScenarioAssignment(partition, frozenset(internal))
