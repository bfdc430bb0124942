"""Query/refinement cosine similarity with pluggable embedders."""

from __future__ import annotations

import hashlib
import os
import time
from collections.abc import Callable, Sequence
from typing import Protocol

import httpx
import numpy as np

from rankcot.errors import BackendError, InputError, SchemaError
from rankcot.gateway import API_KEY_ENV, backoff_delay
from rankcot.text import tokenize


class Embedder(Protocol):
    name: str

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class HashingEmbedder:
    """Deterministic bag-of-words embedder: signed feature hashing of tokens."""

    def __init__(self, dim: int = 256):
        self.dim = dim
        self.name = f"hashing-{dim}"

    def embed(self, texts):
        out = np.zeros((len(texts), self.dim))
        for i, text in enumerate(texts):
            for token in tokenize(text):
                h = int.from_bytes(hashlib.blake2b(token.encode(), digest_size=8).digest(), "little")
                out[i, h % self.dim] += 1.0 if (h >> 63) & 1 else -1.0
        return out


class FixedEmbedder:
    """Looks vectors up in a dict; for constructed test cases."""

    def __init__(self, vectors: dict[str, Sequence[float]], name: str = "fixed"):
        self.vectors = {k: np.asarray(v, dtype=float) for k, v in vectors.items()}
        self.name = name

    def embed(self, texts):
        try:
            return np.stack([self.vectors[t] for t in texts])
        except KeyError as exc:
            raise InputError(f"no fixed embedding for {exc.args[0]!r}") from None
        except ValueError:
            raise InputError("embedding dimension mismatch") from None


class HttpEmbedder:
    """OpenAI-compatible ``POST {base_url}/v1/embeddings``."""

    def __init__(self, base_url: str, model: str, *, timeout: float = 60.0, max_retries: int = 3,
                 transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.name = f"http:{self.base_url}:{model}"
        self.max_retries = max_retries
        self.sleep = sleep
        key = os.environ.get(API_KEY_ENV, "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(timeout=timeout, transport=transport, headers=headers)

    def embed(self, texts):
        url = f"{self.base_url}/v1/embeddings"
        last = ""
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._client.post(url, json={"model": self.model, "input": list(texts)})
            except httpx.TransportError as exc:
                last = str(exc)
            else:
                if resp.status_code < 400:
                    try:
                        data = sorted(resp.json()["data"], key=lambda d: d.get("index", 0))
                        return np.asarray([d["embedding"] for d in data], dtype=float)
                    except (KeyError, TypeError, ValueError):
                        raise SchemaError(f"malformed embeddings response: {resp.text[:200]}") from None
                if resp.status_code != 429 and resp.status_code < 500:
                    raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                last = f"HTTP {resp.status_code}"
            if attempt < self.max_retries:
                self.sleep(backoff_delay(attempt, 1.0, 30.0))
        raise BackendError(f"embedding request failed: {last}")


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise InputError(f"embedding dimension mismatch: {a.shape} vs {b.shape}")
    norms = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    dots = np.einsum("ij,ij->i", a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(norms > 0, dots / np.where(norms > 0, norms, 1.0), 0.0)


def similarity(query_texts: Sequence[str], refinement_texts: Sequence[str], embedder: Embedder) -> float:
    """Mean per-pair cosine between query and refinement embeddings."""
    if len(query_texts) != len(refinement_texts):
        raise InputError("query and refinement lists are not aligned")
    if not query_texts:
        raise InputError("nothing to compare")
    q = np.atleast_2d(embedder.embed(list(query_texts)))
    r = np.atleast_2d(embedder.embed(list(refinement_texts)))
    return float(np.clip(cosine_rows(q, r), -1.0, 1.0).mean())
