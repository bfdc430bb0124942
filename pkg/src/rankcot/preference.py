"""Build DPO preference pairs from per-document chain-of-thought candidates.

Per query: sample one CoT per retrieved document, let the same model reflect
on each CoT, label each reflected CoT by whether it contains a gold answer,
drop queries whose candidates are all positive or all negative, and keep one
(chosen, rejected) pair whose prompt shows the top-m documents together.
"""

from __future__ import annotations

import logging
import math
import os
import random
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from rankcot._validation import check_docs
from rankcot.errors import BackendError, EmptyResultError, InputError
from rankcot.gateway import (
    COT_SAMPLING_TEMPERATURE,
    DETERMINISTIC_TEMPERATURE,
    ChatRequest,
    ChatResponse,
    Gateway,
    make_seed_tag,
)
from rankcot.io import dumps_jsonl, write_json, write_text_atomic
from rankcot.templates import TemplateSet, default_templates
from rankcot.text import contains_answer
from rankcot.types import QueryRecord, ScoredDocument

logger = logging.getLogger(__name__)

DEFAULT_N_DOCS = 10
DEFAULT_CONTEXT_M = 5
VALID_FRACTION_DENOM = 10


class CandidateDropped(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class QueryExcluded(Exception):
    def __init__(self, query_id: str, reason: str, failed: int = 0):
        super().__init__(f"{query_id}: {reason}")
        self.query_id = query_id
        self.reason = reason
        self.failed = failed


@dataclass(frozen=True)
class CoTCandidate:
    query_id: str
    doc_id: str
    raw_cot: str
    refined_cot: str = ""
    label: str | None = None
    doc_rank: int = 0
    sample_index: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PreferencePair:
    query_id: str
    prompt: str
    chosen: str
    rejected: str
    chosen_doc_id: str
    rejected_doc_id: str

    def to_row(self) -> dict:
        return {
            "prompt": self.prompt,
            "chosen": self.chosen,
            "rejected": self.rejected,
            "meta": {
                "query_id": self.query_id,
                "chosen_doc_id": self.chosen_doc_id,
                "rejected_doc_id": self.rejected_doc_id,
            },
        }


@dataclass
class SplitManifest:
    train_ids: list[str]
    valid_ids: list[str]
    seed: int
    stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "counts": {
                "total": len(self.train_ids) + len(self.valid_ids),
                "train": len(self.train_ids),
                "valid": len(self.valid_ids),
            },
            "train_ids": self.train_ids,
            "valid_ids": self.valid_ids,
            "filter_stats": self.stats,
        }


def complete_each(gateway: Gateway, requests: Sequence[ChatRequest]) -> list[ChatResponse | BackendError]:
    """Like ``Gateway.complete_many`` but returns backend errors in place of responses."""

    def one(req):
        try:
            return gateway.complete(req)
        except BackendError as exc:
            return exc

    if len(requests) <= 1:
        return [one(r) for r in requests]
    with ThreadPoolExecutor(max_workers=gateway.max_inflight) as pool:
        return list(pool.map(one, requests))


def sample_candidates(
    query: QueryRecord,
    docs: Sequence[ScoredDocument],
    gateway: Gateway,
    templates: TemplateSet | None = None,
    *,
    n_docs: int = DEFAULT_N_DOCS,
    n_per_doc: int = 1,
    temperature: float = COT_SAMPLING_TEMPERATURE,
) -> list[CoTCandidate]:
    """One CoT request per document, each seeing only that document.

    Failed or empty samples are dropped and logged. Raises
    :class:`QueryExcluded` when more than half of the samples fail.
    """
    docs = check_docs(docs, min_count=n_docs)[:n_docs]
    template = (templates or default_templates())["cot"]
    requests = [
        gateway.request(
            template.messages(query=query.question, documents=template.render_documents([d])),
            temperature=temperature,
            n_samples=n_per_doc,
            seed_tag=make_seed_tag(query.query_id, d.doc_id, 0),
        )
        for d in docs
    ]
    candidates = []
    failed = 0
    for doc, result in zip(docs, complete_each(gateway, requests)):
        if isinstance(result, BackendError):
            logger.warning("CoT sampling failed for %s/%s: %s", query.query_id, doc.doc_id, result)
            failed += n_per_doc
            continue
        for j, text in enumerate(result.completions):
            if not text.strip():
                logger.warning("empty CoT for %s/%s sample %d", query.query_id, doc.doc_id, j)
                failed += 1
                continue
            candidates.append(CoTCandidate(query.query_id, doc.doc_id, text, doc_rank=doc.rank, sample_index=j))
    total = len(docs) * n_per_doc
    if failed * 2 > total:
        raise QueryExcluded(query.query_id, f"{failed} of {total} CoT samples failed", failed)
    return candidates


def _reflect_request(candidate: CoTCandidate, query: QueryRecord, gateway: Gateway, templates: TemplateSet) -> ChatRequest:
    template = templates["reflect"]
    return gateway.request(
        template.messages(query=query.question, cot=candidate.raw_cot),
        temperature=DETERMINISTIC_TEMPERATURE,
        seed_tag=make_seed_tag(query.query_id, candidate.doc_id, "reflect", candidate.sample_index),
    )


def _apply_reflection(candidate: CoTCandidate, completion: str) -> CoTCandidate:
    text = completion.strip()
    if not text:
        raise CandidateDropped("empty reflection")
    return replace(candidate, refined_cot=text)


def self_reflect(
    candidate: CoTCandidate,
    query: QueryRecord,
    gateway: Gateway,
    templates: TemplateSet | None = None,
) -> CoTCandidate:
    """Ask the model to answer from its own CoT; the answer becomes ``refined_cot``."""
    if not candidate.raw_cot:
        raise CandidateDropped("missing raw CoT")
    resp = gateway.complete(_reflect_request(candidate, query, gateway, templates or default_templates()))
    return _apply_reflection(candidate, resp.completions[0])


def reflect_all(
    candidates: Sequence[CoTCandidate],
    query: QueryRecord,
    gateway: Gateway,
    templates: TemplateSet | None = None,
) -> tuple[list[CoTCandidate], int]:
    """Reflect every candidate concurrently. Returns survivors and the drop count."""
    templates = templates or default_templates()
    requests = [_reflect_request(c, query, gateway, templates) for c in candidates]
    kept, dropped = [], 0
    for cand, result in zip(candidates, complete_each(gateway, requests)):
        if isinstance(result, BackendError):
            logger.warning("reflection failed for %s/%s: %s", cand.query_id, cand.doc_id, result)
            dropped += 1
            continue
        try:
            kept.append(_apply_reflection(cand, result.completions[0]))
        except CandidateDropped as exc:
            logger.warning("dropping %s/%s: %s", cand.query_id, cand.doc_id, exc.reason)
            dropped += 1
    return kept, dropped


def label_and_filter(
    candidates: Iterable[CoTCandidate], query: QueryRecord
) -> tuple[list[CoTCandidate], list[CoTCandidate]] | None:
    """Label by gold-answer containment; ``None`` if either side ends up empty."""
    positives, negatives = [], []
    for cand in candidates:
        if contains_answer(cand.refined_cot, query.gold_answers):
            positives.append(replace(cand, label="positive"))
        else:
            negatives.append(replace(cand, label="negative"))
    if not positives or not negatives:
        return None
    return positives, negatives


def _best(cands: Sequence[CoTCandidate]) -> CoTCandidate:
    return min(cands, key=lambda c: (c.doc_rank, c.doc_id, c.sample_index))


def render_pair_prompt(
    query: QueryRecord, context_docs: Sequence[ScoredDocument], templates: TemplateSet | None = None
) -> str:
    template = (templates or default_templates())["cot"]
    return template.render(query=query.question, documents=template.render_documents(context_docs))


def build_pair(
    positives: Sequence[CoTCandidate],
    negatives: Sequence[CoTCandidate],
    query: QueryRecord,
    context_docs: Sequence[ScoredDocument],
    m: int = DEFAULT_CONTEXT_M,
    seed: int = 0,
    templates: TemplateSet | None = None,
) -> PreferencePair:
    """Pair the best-ranked positive with the best-ranked negative.

    "Best" is the smallest source-document rank, ties by ascending doc_id.
    ``seed`` is accepted for interface stability; selection is deterministic.
    """
    if not positives or not negatives:
        raise InputError(f"{query.query_id}: need at least one positive and one negative")
    context = check_docs(context_docs, min_count=m)[:m]
    chosen, rejected = _best(positives), _best(negatives)
    return PreferencePair(
        query_id=query.query_id,
        prompt=render_pair_prompt(query, context, templates),
        chosen=chosen.refined_cot,
        rejected=rejected.refined_cot,
        chosen_doc_id=chosen.doc_id,
        rejected_doc_id=rejected.doc_id,
    )


def n_validation(total: int) -> int:
    """``total / 10`` rounded to nearest, halves rounded up."""
    return math.floor(total / VALID_FRACTION_DENOM + 0.5)


def split_pairs(pairs: Sequence[PreferencePair], seed: int) -> tuple[list[PreferencePair], list[PreferencePair]]:
    ordered = sorted(pairs, key=lambda p: p.query_id)
    ids = [p.query_id for p in ordered]
    if len(set(ids)) != len(ids):
        raise InputError("more than one pair for the same query_id")
    random.Random(seed).shuffle(ordered)
    n_valid = n_validation(len(ordered))
    valid, train = ordered[:n_valid], ordered[n_valid:]
    return train, valid


def split_and_export(
    pairs: Sequence[PreferencePair],
    seed: int,
    out_dir: str | os.PathLike,
    stats: dict | None = None,
) -> SplitManifest:
    """Shuffle under ``seed``, hold out a tenth, write train/valid JSONL and a manifest.

    Files are written to temporaries first and renamed only once all three
    have been produced, so a failure leaves no partial exports behind.
    """
    if not pairs:
        raise EmptyResultError("no trainable pairs")
    train, valid = split_pairs(pairs, seed)
    manifest = SplitManifest(
        train_ids=[p.query_id for p in train],
        valid_ids=[p.query_id for p in valid],
        seed=seed,
        stats=dict(stats or {}),
    )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    staged = {
        "dpo_train.jsonl": dumps_jsonl(p.to_row() for p in train),
        "dpo_valid.jsonl": dumps_jsonl(p.to_row() for p in valid),
    }
    tmp_paths = []
    try:
        for name, text in staged.items():
            tmp_paths.append((write_text_atomic(out_dir / f".{name}.staged", text), out_dir / name))
        tmp_paths.append((write_json(out_dir / ".manifest.json.staged", manifest.to_dict()), out_dir / "manifest.json"))
    except BaseException:
        for tmp, _ in tmp_paths:
            tmp.unlink(missing_ok=True)
        raise
    for tmp, final in tmp_paths:
        os.replace(tmp, final)
    return manifest


@dataclass
class BuildStats:
    n_queries: int = 0
    n_pairs: int = 0
    n_all_positive: int = 0
    n_all_negative: int = 0
    n_failed: int = 0
    n_failed_candidates: int = 0
    n_dropped_reflections: int = 0
    n_insufficient_docs: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_filtered"] = self.n_all_positive + self.n_all_negative
        return d


@dataclass
class _QueryOutcome:
    pair: PreferencePair | None = None
    status: str = "ok"
    failed_candidates: int = 0
    dropped_reflections: int = 0


class PreferenceDataBuilder:
    """End-to-end preference pipeline over a retriever and a gateway.

    ``retrieve`` is any callable ``(question, k) -> list[ScoredDocument]``.
    """

    def __init__(
        self,
        retrieve: Callable[[str, int], list[ScoredDocument]],
        gateway: Gateway,
        templates: TemplateSet | None = None,
        *,
        n_docs: int = DEFAULT_N_DOCS,
        context_m: int = DEFAULT_CONTEXT_M,
        n_per_doc: int = 1,
        cot_temperature: float = COT_SAMPLING_TEMPERATURE,
        seed: int = 0,
        max_workers: int = 1,
    ):
        if context_m > n_docs:
            raise InputError("context_m must not exceed n_docs")
        self.retrieve = retrieve
        self.gateway = gateway
        self.templates = templates or default_templates()
        self.n_docs = n_docs
        self.context_m = context_m
        self.n_per_doc = n_per_doc
        self.cot_temperature = cot_temperature
        self.seed = seed
        self.max_workers = max_workers
        self.stats = BuildStats()

    def _process(self, query: QueryRecord) -> _QueryOutcome:
        docs = self.retrieve(query.question, self.n_docs)
        if len(docs) < self.n_docs:
            logger.warning("%s: insufficient documents (%d < %d)", query.query_id, len(docs), self.n_docs)
            return _QueryOutcome(status="insufficient_docs")
        try:
            raw = sample_candidates(
                query, docs, self.gateway, self.templates,
                n_docs=self.n_docs, n_per_doc=self.n_per_doc, temperature=self.cot_temperature,
            )
        except QueryExcluded as exc:
            logger.warning("excluding query %s", exc)
            return _QueryOutcome(status="failed", failed_candidates=exc.failed)
        failed = self.n_docs * self.n_per_doc - len(raw)
        reflected, dropped = reflect_all(raw, query, self.gateway, self.templates)
        if not reflected:
            return _QueryOutcome(status="failed", failed_candidates=failed, dropped_reflections=dropped)
        labeled = label_and_filter(reflected, query)
        if labeled is None:
            status = "all_negative"
            if all(contains_answer(c.refined_cot, query.gold_answers) for c in reflected):
                status = "all_positive"
            return _QueryOutcome(status=status, failed_candidates=failed, dropped_reflections=dropped)
        pair = build_pair(*labeled, query, docs, self.context_m, self.seed, self.templates)
        return _QueryOutcome(pair, "ok", failed, dropped)

    def build(self, queries: Iterable[QueryRecord]) -> list[PreferencePair]:
        queries = list(queries)
        if self.max_workers > 1 and len(queries) > 1:
            with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                outcomes = list(pool.map(self._process, queries))
        else:
            outcomes = [self._process(q) for q in queries]
        stats = BuildStats(n_queries=len(queries))
        pairs = []
        for outcome in outcomes:
            stats.n_failed_candidates += outcome.failed_candidates
            stats.n_dropped_reflections += outcome.dropped_reflections
            if outcome.status == "ok":
                pairs.append(outcome.pair)
            elif outcome.status == "all_positive":
                stats.n_all_positive += 1
            elif outcome.status == "all_negative":
                stats.n_all_negative += 1
            elif outcome.status == "failed":
                stats.n_failed += 1
            else:
                stats.n_insufficient_docs += 1
        stats.n_pairs = len(pairs)
        self.stats = stats
        return pairs

    def build_and_export(self, queries: Iterable[QueryRecord], out_dir: str | os.PathLike) -> SplitManifest:
        pairs = self.build(queries)
        return split_and_export(pairs, self.seed, out_dir, self.stats.to_dict())
