"""Lexical BM25 retrieval over a JSONL corpus, plus a remote search client.

Scoring uses the Robertson/Sparck-Jones IDF with +0.5 smoothing, clamped at
zero, and the usual saturating term-frequency component::

    idf(t)   = max(0, ln((N - df + 0.5) / (df + 0.5)))
    score(d) = sum over query tokens t of
               idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |d| / avgdl))

Repeated query tokens contribute once per occurrence. Documents scoring zero
are never returned, and ties are broken by ascending ``doc_id``.
"""

from __future__ import annotations

import json
import logging
import math
import os
import random
import time
from collections import Counter
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import httpx
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from rankcot._validation import check_positive_int
from rankcot.errors import BackendError, InputError, SchemaError
from rankcot.gateway import backoff_delay
from rankcot.io import canonical_json, read_jsonl, write_text_atomic
from rankcot.text import tokenize
from rankcot.types import CorpusDocument, ScoredDocument

logger = logging.getLogger(__name__)

INDEX_FORMAT = "rankcot-bm25/1"


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if not (math.isfinite(self.k1) and self.k1 >= 0):
            raise ValueError(f"k1 must be finite and >= 0, got {self.k1}")
        if not (math.isfinite(self.b) and 0.0 <= self.b <= 1.0):
            raise ValueError(f"b must lie in [0, 1], got {self.b}")


def bm25_idf(n_docs: int, df: int) -> float:
    return max(0.0, math.log((n_docs - df + 0.5) / (df + 0.5)))


def bm25_term(idf: float, tf: int, doc_len: int, avgdl: float, params: Bm25Params) -> float:
    k1, b = params.k1, params.b
    return idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * doc_len / avgdl))


def rank_scores(scores: dict[str, float], k: int) -> list[tuple[str, float]]:
    """Top-k positive scores, descending, ties by ascending doc_id."""
    positive = [(doc_id, s) for doc_id, s in scores.items() if s > 0.0]
    positive.sort(key=lambda item: (-item[1], item[0]))
    return positive[:k]


class Bm25Index:
    """Immutable inverted index. Safe to search from many threads."""

    def __init__(
        self,
        documents: Sequence[CorpusDocument],
        term_freqs: Sequence[dict[str, int]],
        params: Bm25Params = Bm25Params(),
    ):
        self.documents = list(documents)
        self.term_freqs = [dict(tf) for tf in term_freqs]
        self.params = params
        self.doc_lens = [sum(tf.values()) for tf in self.term_freqs]
        self.doc_count = len(self.documents)
        self.avgdl = sum(self.doc_lens) / self.doc_count if self.doc_count else 0.0
        self._by_id = {d.doc_id: i for i, d in enumerate(self.documents)}
        postings: dict[str, list[tuple[int, int]]] = {}
        for i, tf in enumerate(self.term_freqs):
            for term, count in tf.items():
                postings.setdefault(term, []).append((i, count))
        self.postings = postings
        self.idf = {t: bm25_idf(self.doc_count, len(p)) for t, p in postings.items()}

    @classmethod
    def build(cls, corpus: Iterable[CorpusDocument], params: Bm25Params = Bm25Params()) -> Bm25Index:
        documents: list[CorpusDocument] = []
        seen: set[str] = set()
        for doc in corpus:
            if doc.doc_id in seen:
                raise InputError(f"duplicate doc_id {doc.doc_id!r} in corpus")
            seen.add(doc.doc_id)
            documents.append(doc)
        if not documents:
            raise InputError("cannot build an index from an empty corpus")
        term_freqs = [Counter(tokenize(d.text)) for d in documents]
        return cls(documents, term_freqs, params)

    def score_all(self, query_text: str) -> dict[str, float]:
        scores = [0.0] * self.doc_count
        for token in tokenize(query_text):
            idf = self.idf.get(token, 0.0)
            if idf == 0.0:
                continue
            for i, tf in self.postings[token]:
                scores[i] += bm25_term(idf, tf, self.doc_lens[i], self.avgdl, self.params)
        return {self.documents[i].doc_id: s for i, s in enumerate(scores) if s > 0.0}

    def search(self, query_text: str, k: int) -> list[ScoredDocument]:
        check_positive_int(k, "k")
        hits = rank_scores(self.score_all(query_text), k)
        out = []
        for rank, (doc_id, score) in enumerate(hits, 1):
            doc = self.documents[self._by_id[doc_id]]
            out.append(ScoredDocument(doc_id, doc.text, score, rank, title=doc.title))
        return out

    def to_dict(self) -> dict:
        return {
            "format": INDEX_FORMAT,
            "params": {"k1": self.params.k1, "b": self.params.b},
            "doc_count": self.doc_count,
            "avgdl": self.avgdl,
            "documents": [
                {**d.to_dict(), "tf": dict(sorted(tf.items()))}
                for d, tf in zip(self.documents, self.term_freqs)
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> Bm25Index:
        if obj.get("format") != INDEX_FORMAT:
            raise InputError(f"unsupported index format {obj.get('format')!r}")
        docs = [CorpusDocument.from_dict(d) for d in obj["documents"]]
        tfs = [d["tf"] for d in obj["documents"]]
        return cls(docs, tfs, Bm25Params(**obj["params"]))

    def save(self, path: str | os.PathLike) -> Path:
        return write_text_atomic(path, canonical_json(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> Bm25Index:
        path = Path(path)
        if not path.is_file():
            raise InputError(f"index not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


def build_index(corpus: Iterable[CorpusDocument], params: Bm25Params = Bm25Params()) -> Bm25Index:
    return Bm25Index.build(corpus, params)


def search(index: Bm25Index, query_text: str, k: int) -> list[ScoredDocument]:
    return index.search(query_text, k)


def load_corpus(path: str | os.PathLike) -> list[CorpusDocument]:
    return read_jsonl(path, CorpusDocument.from_dict)


class Bm25Retriever(BaseEstimator):
    """Estimator wrapper around :class:`Bm25Index`.

    Parameters
    ----------
    k1, b : float
        BM25 saturation and length-normalization parameters.
    k : int
        Default number of documents returned per query.

    Attributes
    ----------
    index_ : Bm25Index
        Built by :meth:`fit` or restored by :meth:`load`.
    """

    def __init__(self, k1: float = 1.2, b: float = 0.75, k: int = 10):
        self.k1 = k1
        self.b = b
        self.k = k

    def fit(self, corpus: Iterable[CorpusDocument], y=None):
        self.index_ = build_index(corpus, Bm25Params(self.k1, self.b))
        self.n_documents_ = self.index_.doc_count
        return self

    def search(self, query_text: str, k: int | None = None) -> list[ScoredDocument]:
        check_is_fitted(self, "index_")
        return self.index_.search(query_text, self.k if k is None else k)

    def predict(self, queries: Iterable[str], k: int | None = None) -> list[list[ScoredDocument]]:
        return [self.search(q, k) for q in queries]

    def save(self, path: str | os.PathLike) -> Path:
        check_is_fitted(self, "index_")
        return self.index_.save(path)

    @classmethod
    def load(cls, path: str | os.PathLike, k: int = 10) -> Bm25Retriever:
        index = Bm25Index.load(path)
        est = cls(k1=index.params.k1, b=index.params.b, k=k)
        est.index_ = index
        est.n_documents_ = index.doc_count
        return est


def _excerpt(payload, limit: int = 200) -> str:
    text = payload if isinstance(payload, str) else json.dumps(payload, ensure_ascii=False)
    return text if len(text) <= limit else text[:limit] + "..."


class RemoteRetriever(BaseEstimator):
    """Client for a remote search service speaking the JSON search wire format.

    Sends ``POST endpoint`` with ``{"query": str, "k": int}`` and expects
    ``{"hits": [{"doc_id", "text", "score"}]}``. Hits are re-sorted by score
    locally before ranks are assigned.
    """

    def __init__(
        self,
        endpoint: str = "",
        k: int = 10,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        backoff_cap: float = 8.0,
        timeout: float = 30.0,
        max_workers: int = 4,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.k = k
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.timeout = timeout
        self.max_workers = max_workers
        self.transport = transport
        self.sleep = sleep

    def fit(self, X=None, y=None):
        if not self.endpoint:
            raise ValueError("RemoteRetriever needs an endpoint")
        self.retry_count_ = 0
        return self

    def _client(self) -> httpx.Client:
        return httpx.Client(timeout=self.timeout, transport=self.transport)

    def _post(self, payload: dict) -> dict:
        attempts = self.max_retries + 1
        last_exc: Exception | None = None
        with self._client() as client:
            for attempt in range(attempts):
                try:
                    resp = client.post(self.endpoint, json=payload)
                    if resp.status_code == 429 or resp.status_code >= 500:
                        raise httpx.HTTPStatusError(
                            f"server returned {resp.status_code}", request=resp.request, response=resp
                        )
                    resp.raise_for_status()
                except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                    retryable = not isinstance(exc, httpx.HTTPStatusError) or (
                        exc.response.status_code == 429 or exc.response.status_code >= 500
                    )
                    last_exc = exc
                    if not retryable or attempt == attempts - 1:
                        break
                    self.retry_count_ = getattr(self, "retry_count_", 0) + 1
                    delay = backoff_delay(attempt, self.backoff_base, self.backoff_cap)
                    logger.warning(
                        "remote search attempt %d/%d failed (%s); retrying in %.2fs",
                        attempt + 1, attempts, exc, delay,
                    )
                    self.sleep(delay)
                    continue
                try:
                    return resp.json()
                except ValueError:
                    raise SchemaError(f"search response is not JSON: {_excerpt(resp.text)}") from None
        raise BackendError(f"remote search failed after {attempts} attempts: {last_exc}")

    def search(self, query_text: str, k: int | None = None) -> list[ScoredDocument]:
        if not hasattr(self, "retry_count_"):
            self.fit()
        k = check_positive_int(self.k if k is None else k, "k")
        body = self._post({"query": query_text, "k": k})
        hits = body.get("hits") if isinstance(body, dict) else None
        if not isinstance(hits, list):
            raise SchemaError(f"search response lacks a 'hits' list: {_excerpt(body)}")
        parsed = []
        for hit in hits:
            try:
                doc_id, text, score = str(hit["doc_id"]), hit["text"], float(hit["score"])
            except (KeyError, TypeError, ValueError):
                raise SchemaError(f"malformed search hit: {_excerpt(hit)}") from None
            if not isinstance(text, str) or not math.isfinite(score):
                raise SchemaError(f"malformed search hit: {_excerpt(hit)}")
            parsed.append((doc_id, text, score, hit.get("title")))
        parsed.sort(key=lambda h: (-h[2], h[0]))
        if len(parsed) > k:
            logger.warning("remote search returned %d hits for k=%d; truncating", len(parsed), k)
        return [
            ScoredDocument(doc_id, text, score, rank, title=title, source="remote")
            for rank, (doc_id, text, score, title) in enumerate(parsed[:k], 1)
        ]

    def predict(self, queries: Iterable[str], k: int | None = None) -> list[list[ScoredDocument]]:
        queries = list(queries)
        with ThreadPoolExecutor(max_workers=max(1, self.max_workers)) as pool:
            return list(pool.map(lambda q: self.search(q, k), queries))


def remote_search(endpoint: str, query_text: str, k: int, **kwargs) -> list[ScoredDocument]:
    return RemoteRetriever(endpoint=endpoint, k=k, **kwargs).fit().search(query_text, k)


def make_toy_corpus(n_docs: int, vocab_size: int = 30, max_len: int = 12, seed: int = 0) -> list[CorpusDocument]:
    """Random corpus over a tiny vocabulary; used by tests and demos."""
    rng = random.Random(seed)
    vocab = [f"w{i}" for i in range(vocab_size)]
    docs = []
    for i in range(n_docs):
        length = rng.randint(1, max_len)
        docs.append(CorpusDocument(f"d{i:04d}", " ".join(rng.choice(vocab) for _ in range(length))))
    return docs
