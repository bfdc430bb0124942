"""Input checks shared by the estimator-style classes."""

from __future__ import annotations

from collections.abc import Iterable, Sequence

from rankcot.errors import ConfigError, InputError
from rankcot.types import QueryRecord, ScoredDocument


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return value


def check_docs(docs: Sequence[ScoredDocument], *, min_count: int = 1) -> list[ScoredDocument]:
    """Return ``docs`` sorted by rank, rejecting empty or too-short lists."""
    docs = list(docs)
    if not docs:
        raise InputError("no documents supplied")
    if len(docs) < min_count:
        raise InputError(f"insufficient documents: need {min_count}, got {len(docs)}")
    return sorted(docs, key=lambda d: (d.rank, d.doc_id))


def check_query(query) -> QueryRecord:
    if not isinstance(query, QueryRecord):
        raise TypeError(f"expected QueryRecord, got {type(query).__name__}")
    return query


def check_pairs(X: Iterable) -> list[tuple[QueryRecord, list[ScoredDocument]]]:
    """Validate an iterable of ``(query, docs)`` pairs for ``transform``."""
    out = []
    for item in X:
        try:
            query, docs = item
        except (TypeError, ValueError):
            raise TypeError("transform expects (QueryRecord, docs) pairs") from None
        out.append((check_query(query), list(docs)))
    return out


def check_configured(obj, *names: str) -> None:
    missing = [n for n in names if getattr(obj, n, None) is None]
    if missing:
        raise ConfigError(f"{type(obj).__name__} is missing {', '.join(missing)}")
