"""Repeated-sampling QA consistency for a fixed query and refinement."""

from __future__ import annotations

import logging

from rankcot.errors import BackendError
from rankcot.evaluation.metrics import accuracy
from rankcot.gateway import Gateway, make_seed_tag
from rankcot.preference import complete_each
from rankcot.templates import TemplateSet, default_templates
from rankcot.types import QueryRecord, RefinementOutput

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = 300
MAX_FAILURE_FRACTION = 0.10


def consistency(
    query: QueryRecord,
    refinement: RefinementOutput | None,
    gateway: Gateway,
    *,
    n_samples: int = DEFAULT_SAMPLES,
    temperature: float = 1.0,
    templates: TemplateSet | None = None,
) -> float:
    """Fraction of ``n_samples`` sampled answers judged correct.

    Each sample is its own request whose seed tag ends in the sample index,
    so every sample is cached separately. Failed samples are left out of the
    denominator; more than 10% failures is an error.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    templates = templates or default_templates()
    if refinement is None:
        method = "closed_book"
        messages = templates["answer_closed_book"].messages(query=query.question)
    else:
        method = refinement.method
        messages = templates["answer_with_context"].messages(query=query.question, documents=refinement.text)
    requests = [
        gateway.request(messages, temperature=temperature,
                        seed_tag=make_seed_tag(query.query_id, "consistency", method, i))
        for i in range(n_samples)
    ]
    results = complete_each(gateway, requests)
    failures = sum(isinstance(r, BackendError) for r in results)
    if failures > MAX_FAILURE_FRACTION * n_samples:
        raise BackendError(f"{failures}/{n_samples} consistency samples failed for {query.query_id}")
    if failures:
        logger.warning("%d consistency samples failed for %s", failures, query.query_id)
    answers = [r.completions[0] for r in results if not isinstance(r, BackendError)]
    if not answers:
        raise BackendError(f"no consistency samples succeeded for {query.query_id}")
    return sum(accuracy(a, query.gold_answers) for a in answers) / len(answers)
