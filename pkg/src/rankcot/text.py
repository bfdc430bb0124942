"""Tokenization and answer normalization shared by retrieval and metrics."""

from __future__ import annotations

import re
import string
import unicodedata
from collections.abc import Iterable

_TOKEN_RE = re.compile(r"[^\W_]+")
_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT = frozenset(string.punctuation)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit.

    No stemming and no stopword removal, so brute-force oracles can reproduce
    the index exactly.
    """
    return _TOKEN_RE.findall(text.lower())


def _is_punct(ch: str) -> bool:
    return ch in _PUNCT or unicodedata.category(ch).startswith("P")


def normalize_answer(text: str, *, strip_articles: bool = True) -> str:
    """Lowercase, delete punctuation, drop articles, collapse whitespace.

    Punctuation is deleted rather than replaced, so ``"U.S."`` becomes ``"us"``.
    """
    text = text.lower()
    text = "".join(ch for ch in text if not _is_punct(ch))
    if strip_articles:
        text = _ARTICLES_RE.sub(" ", text)
    return " ".join(text.split())


def contains_answer(text: str, gold_answers: Iterable[str]) -> bool:
    """True iff any normalized alias is a substring of the normalized text."""
    aliases = [normalize_answer(g) for g in gold_answers]
    if not aliases:
        raise ValueError("gold_answers must be non-empty")
    haystack = normalize_answer(text)
    if not haystack:
        return False
    return any(alias and alias in haystack for alias in aliases)
