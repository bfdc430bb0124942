"""The four knowledge-refinement strategies and the answer-generation step.

Each refiner is a stateless estimator: ``fit`` only checks configuration and
``transform`` maps ``(QueryRecord, docs)`` pairs to :class:`RefinementOutput`.
"""

from __future__ import annotations

import logging
import string
import threading
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor

from sklearn.base import BaseEstimator, TransformerMixin

from rankcot._validation import check_configured, check_docs, check_pairs, check_query
from rankcot.errors import BackendError, InputError
from rankcot.gateway import DETERMINISTIC_TEMPERATURE, Gateway, make_seed_tag
from rankcot.templates import TemplateSet, default_templates
from rankcot.types import GenerationRecord, QueryRecord, RefinementOutput, ScoredDocument

logger = logging.getLogger(__name__)

DEFAULT_CONTEXT_DOCS = 5

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def parse_relevance_label(completion: str) -> bool | None:
    """``True`` for YES, ``False`` for NO, ``None`` when neither prefix matches."""
    label = completion.strip().upper().translate(_PUNCT_TABLE).strip()
    if label.startswith("YES"):
        return True
    if label.startswith("NO"):
        return False
    return None


class _Refiner(TransformerMixin, BaseEstimator):
    method: str = ""

    def __init__(
        self,
        gateway: Gateway | None = None,
        templates: TemplateSet | None = None,
        doc_separator: str = "\n\n",
        temperature: float = DETERMINISTIC_TEMPERATURE,
        max_workers: int = 1,
    ):
        self.gateway = gateway
        self.templates = templates
        self.doc_separator = doc_separator
        self.temperature = temperature
        self.max_workers = max_workers

    def _templates(self) -> TemplateSet:
        return self.templates if self.templates is not None else default_templates()

    def fit(self, X=None, y=None):
        return self

    def refine(self, query: QueryRecord, docs: Sequence[ScoredDocument]) -> RefinementOutput:
        raise NotImplementedError

    def transform(self, X: Iterable) -> list[RefinementOutput]:
        pairs = check_pairs(X)
        if self.max_workers <= 1 or len(pairs) <= 1:
            return [self.refine(q, d) for q, d in pairs]
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            return list(pool.map(lambda p: self.refine(*p), pairs))


class NoRefinement(_Refiner):
    """Concatenate the retrieved documents in rank order. No LLM call."""

    method = "none"

    def refine(self, query, docs):
        check_query(query)
        docs = check_docs(docs)
        text = self.doc_separator.join(d.text for d in docs)
        return RefinementOutput(
            "none", query.query_id, text, context_doc_ids=tuple(d.doc_id for d in docs)
        )


class RerankRefiner(_Refiner):
    """Ask for a YES/NO relevance label per document and keep the YES ones.

    Labels that parse as neither YES nor NO keep the document and bump
    ``unparsed_labels``.
    """

    method = "rerank"

    def fit(self, X=None, y=None):
        check_configured(self, "gateway")
        return self

    @property
    def unparsed_labels(self) -> int:
        return getattr(self, "_unparsed", 0)

    def _bump_unparsed(self):
        lock = self.__dict__.setdefault("_lock", threading.Lock())
        with lock:
            self._unparsed = self.unparsed_labels + 1

    def refine(self, query, docs):
        check_configured(self, "gateway")
        check_query(query)
        docs = check_docs(docs)
        template = self._templates()["rerank"]
        requests = [
            self.gateway.request(
                template.messages(query=query.question, document=template.render_documents([d])),
                temperature=self.temperature,
                seed_tag=make_seed_tag(query.query_id, "rerank", d.doc_id, 0),
            )
            for d in docs
        ]
        # any failure aborts the whole query
        responses = [self.gateway.complete(r) for r in requests]
        kept = []
        for doc, resp in zip(docs, responses):
            verdict = parse_relevance_label(resp.completions[0])
            if verdict is None:
                logger.warning(
                    "unparseable rerank label %r for %s/%s; keeping document",
                    resp.completions[0][:40], query.query_id, doc.doc_id,
                )
                self._bump_unparsed()
                verdict = True
            if verdict:
                kept.append(doc)
        text = self.doc_separator.join(d.text for d in kept)
        return RefinementOutput(
            "rerank",
            query.query_id,
            text,
            kept_doc_ids=tuple(d.doc_id for d in kept),
            context_doc_ids=tuple(d.doc_id for d in docs),
        )


class _GenerativeRefiner(_Refiner):
    template_name = ""

    def fit(self, X=None, y=None):
        check_configured(self, "gateway")
        return self

    def refine(self, query, docs):
        check_configured(self, "gateway")
        check_query(query)
        docs = check_docs(docs)
        template = self._templates()[self.template_name]
        resp = self.gateway.chat(
            template.messages(query=query.question, documents=template.render_documents(docs)),
            temperature=self.temperature,
            seed_tag=make_seed_tag(query.query_id, self.method, 0),
        )
        text = resp.completions[0].strip()
        if not text:
            raise BackendError(f"empty refinement from {self.method} for query {query.query_id}")
        return RefinementOutput(
            self.method, query.query_id, text, context_doc_ids=tuple(d.doc_id for d in docs)
        )


class SummaryRefiner(_GenerativeRefiner):
    """One summarization call over all documents."""

    method = "summary"
    template_name = "summary"


class RankCoTRefiner(_GenerativeRefiner):
    """One chain-of-thought call over all documents.

    Same transport as :class:`SummaryRefiner`; pointed at a DPO-trained model
    this is the RankCoT refiner, pointed at the base model it is the plain
    CoT baseline.
    """

    method = "rankcot"
    template_name = "cot"


REFINERS: dict[str, type[_Refiner]] = {
    "none": NoRefinement,
    "rerank": RerankRefiner,
    "summary": SummaryRefiner,
    "rankcot": RankCoTRefiner,
}


def make_refiner(method: str, **params) -> _Refiner:
    try:
        cls = REFINERS[method]
    except KeyError:
        raise InputError(f"unknown refinement method {method!r}; expected one of {sorted(REFINERS)}") from None
    return cls(**params)


def refine_none(query, docs, **params) -> RefinementOutput:
    return NoRefinement(**params).refine(query, docs)


def refine_rerank(query, docs, gateway, **params) -> RefinementOutput:
    return RerankRefiner(gateway=gateway, **params).refine(query, docs)


def refine_summary(query, docs, gateway, **params) -> RefinementOutput:
    return SummaryRefiner(gateway=gateway, **params).refine(query, docs)


def refine_rankcot(query, docs, gateway, **params) -> RefinementOutput:
    return RankCoTRefiner(gateway=gateway, **params).refine(query, docs)


def answer(
    query: QueryRecord,
    context: RefinementOutput | None,
    gateway: Gateway,
    templates: TemplateSet | None = None,
    *,
    temperature: float = DETERMINISTIC_TEMPERATURE,
    seed_tag: str | None = None,
) -> GenerationRecord:
    """Generate the final answer from a refinement, or closed-book when ``context`` is None.

    An empty refinement (every document dropped by rerank) is still answered
    with the context template, its documents block left empty, and the record
    is flagged ``empty_context``.
    """
    check_query(query)
    templates = templates if templates is not None else default_templates()
    if context is None:
        method = "closed_book"
        messages = templates["answer_closed_book"].messages(query=query.question)
        context_text = ""
    else:
        method = context.method
        context_text = context.text
        messages = templates["answer_with_context"].messages(
            query=query.question, documents=context_text
        )
    if seed_tag is None:
        seed_tag = make_seed_tag(query.query_id, "answer", method, 0)
    resp = gateway.chat(messages, temperature=temperature, seed_tag=seed_tag)
    return GenerationRecord(
        query_id=query.query_id,
        method=method,
        answer=resp.completions[0].strip(),
        refinement_text=context_text,
        empty_context=context is not None and not context_text,
        prompt_chars=sum(len(m["content"]) for m in messages),
    )


class AnswerGenerator(BaseEstimator):
    """Estimator form of :func:`answer`; ``predict`` takes ``(query, refinement)`` pairs."""

    def __init__(
        self,
        gateway: Gateway | None = None,
        templates: TemplateSet | None = None,
        temperature: float = DETERMINISTIC_TEMPERATURE,
        max_workers: int = 1,
    ):
        self.gateway = gateway
        self.templates = templates
        self.temperature = temperature
        self.max_workers = max_workers

    def fit(self, X=None, y=None):
        check_configured(self, "gateway")
        return self

    def _one(self, pair) -> GenerationRecord:
        query, context = pair
        return answer(query, context, self.gateway, self.templates, temperature=self.temperature)

    def predict(self, X: Iterable) -> list[GenerationRecord]:
        check_configured(self, "gateway")
        pairs = list(X)
        if self.max_workers <= 1 or len(pairs) <= 1:
            return [self._one(p) for p in pairs]
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            return list(pool.map(self._one, pairs))
