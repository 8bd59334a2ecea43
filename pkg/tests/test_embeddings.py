import math

import pytest
from hypothesis import given, strategies as st

from cogmem.embeddings import (
    EmbeddingProviderError,
    EmbeddingService,
    EmbeddingVector,
    HashingEmbeddingBackend,
    cache_key,
    cosine_similarity,
)


class SpyBackend:
    """Counts backend invocations; delegates to the hashing backend."""

    def __init__(self):
        self.inner = HashingEmbeddingBackend()
        self.calls = []

    def embed(self, texts):
        self.calls.append(list(texts))
        return self.inner.embed(texts)


class BrokenBackend:
    def embed(self, texts):
        raise RuntimeError("boom")


class TestCosine:
    def test_identity(self):
        v = HashingEmbeddingBackend().embed_one("deploy the service")
        assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal(self):
        a = EmbeddingVector([1.0, 0.0])
        b = EmbeddingVector([0.0, 1.0])
        assert cosine_similarity(a, b) == 0.0
        assert cosine_similarity(b, a) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            cosine_similarity(EmbeddingVector([1.0]), EmbeddingVector([1.0, 0.0]))

    def test_similar_texts_overlap(self):
        # Golden value: shipped default provider gives strong overlap for
        # token-sharing texts.
        backend = HashingEmbeddingBackend()
        a = backend.embed_one("deploy service")
        b = backend.embed_one("deploy the service")
        assert cosine_similarity(a, b) >= 0.5


class TestDefaultBackend:
    def test_deterministic(self):
        a = HashingEmbeddingBackend().embed_one("hello world")
        b = HashingEmbeddingBackend().embed_one("hello world")
        assert a == b

    def test_normalized(self):
        v = HashingEmbeddingBackend().embed_one("some nontrivial text")
        assert v.norm == pytest.approx(1.0, abs=1e-6)

    def test_empty_text_zero_vector(self):
        v = HashingEmbeddingBackend().embed_one("")
        assert v.norm == 0.0

    def test_dimension(self):
        assert HashingEmbeddingBackend().embed_one("x").dimension == 256


class TestEmbedBatch:
    def test_identical_inputs_one_backend_text(self):
        spy = SpyBackend()
        svc = EmbeddingService(backend=spy)
        out = svc.embed_batch(["a", "a"])
        assert out[0] == out[1]
        assert spy.calls == [["a"]]

    def test_cross_call_cache_hit(self):
        spy = SpyBackend()
        svc = EmbeddingService(backend=spy)
        svc.embed_batch(["same text"])
        svc.embed_batch(["same text"])
        assert len(spy.calls) == 1

    def test_partial_cache_sends_only_misses(self):
        spy = SpyBackend()
        svc = EmbeddingService(backend=spy)
        svc.embed_batch(["cached"])
        svc.embed_batch(["cached", "new one", "new two"])
        assert spy.calls[1] == ["new one", "new two"]

    def test_empty_batch(self):
        assert EmbeddingService().embed_batch([]) == []

    def test_order_preserved(self):
        svc = EmbeddingService()
        texts = ["alpha", "beta", "gamma"]
        direct = HashingEmbeddingBackend().embed(texts)
        assert svc.embed_batch(texts) == direct

    def test_prefix_consistency(self):
        svc = EmbeddingService()
        xs = ["one", "two"]
        ys = ["three"]
        combined = EmbeddingService().embed_batch(xs + ys)
        assert svc.embed_batch(xs) == combined[: len(xs)]

    def test_backend_failure_carries_indices(self):
        svc = EmbeddingService(backend=BrokenBackend())
        with pytest.raises(EmbeddingProviderError) as exc:
            svc.embed_batch(["a", "b"])
        assert exc.value.failing_indices == [0, 1]

    def test_cache_failure_degrades(self):
        events = []
        svc = EmbeddingService(on_event=lambda t, p: events.append((t, p)))
        svc.fail_cache = True
        out = svc.embed_batch(["still works"])
        assert out[0].norm == pytest.approx(1.0, abs=1e-6)
        assert events and events[0][0] == "degraded_operation"

    def test_ttl_expiry_recomputes(self):
        now = [0]
        spy = SpyBackend()
        svc = EmbeddingService(backend=spy, ttl_ms=1000, clock=lambda: now[0])
        svc.embed_batch(["x"])
        now[0] = 2000
        svc.embed_batch(["x"])
        assert len(spy.calls) == 2

    def test_eviction_least_recently_written(self):
        svc = EmbeddingService(max_entries=2)
        svc.embed_batch(["a"])
        svc.embed_batch(["b"])
        svc.embed_batch(["c"])
        assert svc.cache_size() == 2


def test_cache_key_is_truncated_sha256():
    assert cache_key("abc") == "ba7816bf8f01cfea414140de5dae2223"
    assert len(cache_key("anything")) == 32


@given(st.text(max_size=100), st.text(max_size=100))
def test_cosine_symmetric(a, b):
    backend = HashingEmbeddingBackend()
    va, vb = backend.embed_one(a), backend.embed_one(b)
    assert cosine_similarity(va, vb) == pytest.approx(cosine_similarity(vb, va))
    assert -1.0 <= cosine_similarity(va, vb) <= 1.0
