"""QA metrics: containment accuracy, Rouge-L, String-EM, hit rate, lengths."""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

from rankcot.errors import InputError
from rankcot.text import contains_answer, normalize_answer
from rankcot.types import RefinementOutput


def accuracy(answer: str, gold_answers: Sequence[str]) -> bool:
    """Correct iff the answer contains any gold alias after normalization."""
    return contains_answer(answer, gold_answers)


def rouge_tokens(text: str) -> list[str]:
    # articles are kept: Rouge-L compares whole answers, not aliases
    return normalize_answer(text, strip_articles=False).split()


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def _rouge_tokens_score(hyp: Sequence[str], ref: Sequence[str]) -> RougeScore:
    if not hyp or not ref:
        return RougeScore(0.0, 0.0, 0.0)
    lcs = lcs_length(hyp, ref)
    p, r = lcs / len(hyp), lcs / len(ref)
    f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return RougeScore(p, r, f1)


def rouge_l(hypothesis: str, reference: str | Sequence[str]) -> RougeScore:
    """Sentence-level LCS precision/recall/F1.

    With several references the one giving the highest F1 is reported.
    """
    refs = [reference] if isinstance(reference, str) else list(reference)
    if not refs:
        return RougeScore(0.0, 0.0, 0.0)
    hyp = rouge_tokens(hypothesis)
    scores = [_rouge_tokens_score(hyp, rouge_tokens(r)) for r in refs]
    return max(scores, key=lambda s: s.f1)


def string_em(answer: str, short_answer_sets: Sequence[Sequence[str]]) -> float:
    """Fraction of alias sets with at least one alias contained in the answer."""
    if not short_answer_sets:
        raise ValueError("short_answer_sets must be non-empty")
    hits = sum(1 for aliases in short_answer_sets if contains_answer(answer, aliases))
    return hits / len(short_answer_sets)


def hit_rate(refinements: Iterable[RefinementOutput], gold: Mapping[str, Sequence[str]]) -> float:
    refinements = list(refinements)
    if not refinements:
        raise ValueError("no refinements to score")
    hits = 0
    for ref in refinements:
        if ref.query_id not in gold:
            raise InputError(f"no gold answers for query {ref.query_id!r}")
        hits += contains_answer(ref.text, gold[ref.query_id])
    return hits / len(refinements)


def length_stats(groups: Mapping[str, Sequence[int]], baseline_method: str) -> dict:
    """Mean character length per method and its ratio to ``baseline_method``.

    Returns ``{"mean_len": {method: float}, "change_ratio": {method: float}}``.
    """
    if baseline_method not in groups:
        raise InputError(f"baseline group {baseline_method!r} is missing")
    means = {}
    for method, lens in groups.items():
        lens = list(lens)
        if not lens:
            raise InputError(f"length group {method!r} is empty")
        means[method] = sum(lens) / len(lens)
    base = means[baseline_method]
    ratios = {m: (v / base if base else float("nan")) for m, v in means.items()}
    return {"mean_len": means, "change_ratio": ratios}


METRICS = ("accuracy", "string_em", "rouge_l")
