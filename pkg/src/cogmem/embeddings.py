"""Pluggable text embeddings with a deterministic default and a hash-keyed
TTL cache.

The default backend is feature hashing: lowercased word unigrams plus
3-character shingles hashed into 256 signed dimensions, then L2-normalized.
No external model, bit-identical across processes, and token-sharing texts
get meaningful cosine overlap.
"""

from __future__ import annotations

import hashlib
import math
import threading
import time
from collections import OrderedDict
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

DEFAULT_DIMENSION = 256
DEFAULT_TTL_MS = 24 * 3600 * 1000
DEFAULT_MAX_ENTRIES = 100_000


class EmbeddingVector:
    """Fixed-length real vector. Non-degenerate vectors are unit-norm."""

    __slots__ = ("values",)

    def __init__(self, values: Sequence[float]):
        self.values = np.asarray(values, dtype=np.float64)

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def tolist(self) -> list[float]:
        return self.values.tolist()

    def __eq__(self, other) -> bool:
        return isinstance(other, EmbeddingVector) and np.array_equal(
            self.values, other.values
        )

    def __repr__(self) -> str:
        return f"EmbeddingVector(dim={self.dimension}, norm={self.norm:.6f})"


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine of the angle between two vectors, in [-1, 1]."""
    if a.dimension != b.dimension:
        raise ValueError(f"dimension mismatch: {a.dimension} != {b.dimension}")
    na, nb = a.norm, b.norm
    if na == 0.0 or nb == 0.0:
        return 0.0
    value = float(np.dot(a.values, b.values) / (na * nb))
    return max(-1.0, min(1.0, value))


class EmbeddingBackend(Protocol):
    def embed(self, texts: list[str]) -> list[EmbeddingVector]: ...


def _stable_hash(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _features(text: str) -> list[str]:
    lowered = text.lower()
    feats = lowered.split()
    compact = "".join(lowered.split())
    feats.extend(compact[i : i + 3] for i in range(len(compact) - 2))
    return feats


class HashingEmbeddingBackend:
    """Deterministic feature-hashing embedder (the shipped default)."""

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        self.dimension = dimension

    def embed_one(self, text: str) -> EmbeddingVector:
        vec = np.zeros(self.dimension, dtype=np.float64)
        for feat in _features(text):
            h = _stable_hash(feat)
            idx = h % self.dimension
            sign = 1.0 if _stable_hash("#" + feat) & 1 else -1.0
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return EmbeddingVector(vec)

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        return [self.embed_one(t) for t in texts]


class EmbeddingProviderError(RuntimeError):
    """Backend failure; carries the input indices that were in flight."""

    def __init__(self, failing_indices: list[int], cause: Exception):
        super().__init__(f"embedding backend failed for indices {failing_indices}: {cause}")
        self.failing_indices = failing_indices
        self.cause = cause


def cache_key(text: str) -> str:
    """Truncated SHA-256 of the input text: first 16 bytes, hex."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:32]


class _BrokenCacheGuard(Exception):
    pass


class EmbeddingService:
    """Cache-fronted embedding service.

    Batch calls do one cache read pass and one write pass; only misses reach
    the backend. Cache failure degrades to an uncached backend call with a
    degraded-operation event. Concurrent fills may race; last write wins,
    which is safe because values are deterministic.
    """

    def __init__(
        self,
        backend: Optional[EmbeddingBackend] = None,
        ttl_ms: int = DEFAULT_TTL_MS,
        max_entries: int = DEFAULT_MAX_ENTRIES,
        on_event: Optional[Callable[[str, dict], None]] = None,
        clock: Callable[[], int] = lambda: int(time.time() * 1000),
    ):
        self.backend = backend or HashingEmbeddingBackend()
        self.ttl_ms = ttl_ms
        self.max_entries = max_entries
        self.on_event = on_event
        self.clock = clock
        self._cache: OrderedDict[str, tuple[EmbeddingVector, int]] = OrderedDict()
        self._lock = threading.Lock()
        self.backend_calls = 0
        self.backend_texts = 0
        # Test hook: set True to simulate cache storage failure.
        self.fail_cache = False

    def _emit(self, event_type: str, payload: dict) -> None:
        if self.on_event is not None:
            self.on_event(event_type, payload)

    def _cache_get_many(self, keys: list[str]) -> dict[str, EmbeddingVector]:
        if self.fail_cache:
            raise _BrokenCacheGuard()
        now = self.clock()
        found: dict[str, EmbeddingVector] = {}
        with self._lock:
            for key in keys:
                entry = self._cache.get(key)
                if entry is None:
                    continue
                vector, expires_at = entry
                if expires_at <= now:
                    del self._cache[key]
                    continue
                found[key] = vector
        return found

    def _cache_put_many(self, items: dict[str, EmbeddingVector]) -> None:
        if self.fail_cache:
            raise _BrokenCacheGuard()
        expires_at = self.clock() + self.ttl_ms
        with self._lock:
            for key, vector in items.items():
                if key in self._cache:
                    del self._cache[key]
                self._cache[key] = (vector, expires_at)
            while len(self._cache) > self.max_entries:
                self._cache.popitem(last=False)  # least recently written

    def _backend_embed(self, texts: list[str], indices: list[int]) -> list[EmbeddingVector]:
        try:
            self.backend_calls += 1
            self.backend_texts += len(texts)
            vectors = self.backend.embed(texts)
        except Exception as exc:
            raise EmbeddingProviderError(indices, exc) from exc
        if len(vectors) != len(texts):
            raise EmbeddingProviderError(
                indices, ValueError("backend returned wrong count")
            )
        return vectors

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        if not texts:
            return []
        keys = [cache_key(t) for t in texts]
        try:
            cached = self._cache_get_many(keys)
        except _BrokenCacheGuard:
            self._emit("degraded_operation", {"component": "embedding_cache", "op": "read"})
            return self._backend_embed(list(texts), list(range(len(texts))))

        miss_texts: list[str] = []
        miss_indices: list[int] = []
        seen_keys: set[str] = set()
        for i, key in enumerate(keys):
            if key not in cached and key not in seen_keys:
                seen_keys.add(key)
                miss_texts.append(texts[i])
                miss_indices.append(i)

        fresh: dict[str, EmbeddingVector] = {}
        if miss_texts:
            vectors = self._backend_embed(miss_texts, miss_indices)
            fresh = {cache_key(t): v for t, v in zip(miss_texts, vectors)}
            try:
                self._cache_put_many(fresh)
            except _BrokenCacheGuard:
                self._emit("degraded_operation", {"component": "embedding_cache", "op": "write"})

        merged = {**cached, **fresh}
        return [merged[key] for key in keys]

    def embed_one(self, text: str) -> EmbeddingVector:
        return self.embed_batch([text])[0]

    def cache_size(self) -> int:
        with self._lock:
            return len(self._cache)
