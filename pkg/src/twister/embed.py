"""Text embedding backends, cosine similarity and item-text composition."""

from __future__ import annotations

import hashlib
import logging
import os
import re
import time
from functools import lru_cache
from typing import Protocol, Sequence

import httpx
import numpy as np

from .teg import BipartiteTEG

log = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric runs; everything else separates tokens."""
    return _TOKEN_RE.findall(text.lower())


class EmbeddingError(RuntimeError):
    def __init__(self, message: str, failed: Sequence[int] = ()):
        super().__init__(message)
        self.failed = list(failed)


class EmbeddingBackend(Protocol):
    name: str
    dim: int
    deterministic: bool

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        """Rows for non-empty texts; callers handle empty ones."""
        ...


@lru_cache(maxsize=1 << 16)
def _bucket(token: str, dim: int) -> tuple[int, float]:
    h = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
    return h % dim, (1.0 if (h >> 63) & 1 == 0 else -1.0)


class HashingEmbedder:
    """Signed feature hashing of a bag of words, L2-normalised.

    Tokens are hashed with blake2b, not Python's per-process salted ``hash``,
    so vectors are stable across runs.
    """

    deterministic = True

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.name = f"hashing-{dim}"

    def vector(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for tok in tokenize(text):
            k, s = _bucket(tok, self.dim)
            vec[k] += s
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.stack([self.vector(t) for t in texts])


class RemoteEmbedder:
    """Client for an OpenAI-compatible ``/embeddings`` endpoint.

    Endpoint, model and key default to ``TWISTER_EMBED_ENDPOINT``,
    ``TWISTER_EMBED_MODEL`` and ``TWISTER_LLM_API_KEY``.
    """

    deterministic = False

    def __init__(
        self,
        endpoint: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        dim: int | None = None,
        batch_size: int = 64,
        max_attempts: int = 3,
        backoff: float = 1.0,
        timeout: float = 60.0,
        client: httpx.Client | None = None,
    ):
        self.endpoint = (endpoint or os.environ.get("TWISTER_EMBED_ENDPOINT", "")).rstrip("/")
        if not self.endpoint:
            raise ValueError("no embeddings endpoint configured (set TWISTER_EMBED_ENDPOINT)")
        self.model = model or os.environ.get("TWISTER_EMBED_MODEL", "text-embedding")
        self.api_key = api_key if api_key is not None else os.environ.get("TWISTER_LLM_API_KEY", "")
        self.dim = dim or 0
        self.name = f"remote:{self.model}"
        self.batch_size = batch_size
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)

    def _url(self) -> str:
        return self.endpoint if self.endpoint.endswith("/embeddings") else self.endpoint + "/embeddings"

    def _post(self, batch: list[str]) -> list[list[float]]:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        last = None
        for attempt in range(self.max_attempts):
            try:
                resp = self._client.post(self._url(), json={"model": self.model, "input": batch}, headers=headers)
                resp.raise_for_status()
                data = sorted(resp.json()["data"], key=lambda d: d.get("index", 0))
                if len(data) != len(batch):
                    raise ValueError(f"expected {len(batch)} embeddings, got {len(data)}")
                return [d["embedding"] for d in data]
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last = exc
                log.warning("embedding request failed (attempt %d/%d): %s", attempt + 1, self.max_attempts, exc)
                if attempt + 1 < self.max_attempts:
                    time.sleep(self.backoff * 2**attempt)
        raise EmbeddingError(f"embedding request failed after {self.max_attempts} attempts: {last}")

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        rows: list[list[float]] = []
        failed: list[int] = []
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start : start + self.batch_size])
            try:
                rows.extend(self._post(batch))
            except EmbeddingError:
                failed.extend(range(start, start + len(batch)))
                rows.extend([[]] * len(batch))
        if failed:
            raise EmbeddingError(f"{len(failed)} texts could not be embedded", failed)
        out = np.asarray(rows, dtype=float)
        self.dim = out.shape[1] if out.size else self.dim
        return out


def embed(backend: EmbeddingBackend, texts: Sequence[str | None]) -> np.ndarray:
    """Embed texts in order; empty, whitespace-only or missing texts map to the zero row."""
    texts = [t if t is not None else "" for t in texts]
    live = [k for k, t in enumerate(texts) if t.strip()]
    rows = backend.encode([texts[k] for k in live]) if live else np.zeros((0, backend.dim))
    dim = rows.shape[1] if live else backend.dim
    out = np.zeros((len(texts), dim))
    if live:
        out[live] = rows
    if not np.all(np.isfinite(out)):
        raise EmbeddingError("backend returned non-finite values")
    return out


def cosine(a, b) -> float:
    """Cosine similarity, defined as 0 when either vector is zero."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def item_text(teg: BipartiteTEG, item_id: str, sep: str = " ") -> str:
    """Item metadata if present, else the item's observed reviews in edge order, else ''."""
    if not teg.has_item(item_id):
        raise KeyError(f"unknown item {item_id!r}")
    meta = teg.item_metadata.get(item_id, "")
    if meta.strip():
        return meta
    reviews = [teg.edges[e].review for e in teg.item_edges(item_id)]
    return sep.join(r for r in reviews if r)


def item_embeddings(teg: BipartiteTEG, backend: EmbeddingBackend) -> dict[str, np.ndarray]:
    rows = embed(backend, [item_text(teg, i) for i in teg.items])
    return {i: rows[k] for k, i in enumerate(teg.items)}
