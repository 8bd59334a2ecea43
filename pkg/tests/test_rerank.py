import json
import math

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cogmem.embeddings import EmbeddingService, EmbeddingVector, cosine_similarity
from cogmem.model import TypedEdge
from cogmem.rerank import RerankConfig, Reranker, token_overlap
from cogmem.retrieval import RetrievedCandidate
from cogmem.trace import TraceLedger


def cand(fact_id, text, score, embedding=None, relations=None):
    return RetrievedCandidate(
        fact_id=fact_id, text=text, raw_score=score, weighted_score=score,
        source_set={"semantic"}, embedding=embedding,
        relations=relations or [])


class TestTokenOverlap:
    CASES = [
        ("a b", "a b", 1.0),
        ("a b", "c d", 0.0),
        ("a b c", "b c d", 0.5),
        ("", "", 0.0),
        ("A B", "a b", 1.0),  # case-insensitive
        ("x", "", 0.0),
    ]

    @pytest.mark.parametrize("a,b,expected", CASES)
    def test_table(self, a, b, expected):
        assert token_overlap(a, b) == pytest.approx(expected)

    @given(st.text(), st.text())
    def test_symmetric_and_bounded(self, a, b):
        v = token_overlap(a, b)
        assert 0.0 <= v <= 1.0
        assert v == token_overlap(b, a)


class TestStages:
    def test_stage1_blend_prunes(self):
        # overlap 0.6, retrieval 0.4 -> stage1 0.5; beats overlap 0, retrieval 0.8
        strong = cand("a", "a b c d e", 0.4)  # query "a b c": 3/5 = 0.6
        weak = cand("b", "x y z", 0.8)        # overlap 0 -> stage1 0.4
        out = Reranker(RerankConfig(prune_cap=1)).rerank("a b c", [strong, weak])
        assert [c.fact_id for c in out] == ["a"]

    def test_no_endpoint_equals_stage2_order(self):
        embed = EmbeddingService()
        q = "database migration plan"
        texts = ["database migration steps", "weekly lunch menu",
                 "migration plan for the database"]
        candidates = [cand(f"c{i}", t, 0.1 * i, embed.embed_one(t))
                      for i, t in enumerate(texts)]
        cfg = RerankConfig(blend_alpha=0.7)
        out = Reranker(cfg).rerank(q, candidates,
                                   query_embedding=embed.embed_one(q))
        qv = embed.embed_one(q)
        expected = {}
        for c in candidates:
            s1 = 0.5 * token_overlap(q, c.text) + 0.5 * c.weighted_score
            s2 = 0.7 * max(cosine_similarity(qv, c.embedding), 0.0) + 0.3 * s1
            expected[c.fact_id] = s2
        want = sorted(expected, key=lambda k: (-expected[k], k))
        assert [c.fact_id for c in out] == want

    def test_empty_input(self):
        assert Reranker().rerank("q", []) == []

    def test_output_subset_and_capped(self):
        embed = EmbeddingService()
        candidates = [cand(f"c{i}", f"text number {i}", 0.5,
                           embed.embed_one(f"text number {i}"))
                      for i in range(10)]
        out = Reranker(RerankConfig(prune_cap=4)).rerank("text", candidates)
        assert len(out) <= 4
        assert {c.fact_id for c in out} <= {c.fact_id for c in candidates}


def vec(*values):
    return EmbeddingVector(values)


class TestDuplicateMerge:
    def test_transitive_cluster_keeps_best(self):
        v1 = vec(1.0, 0.0, 0.0)
        v2 = vec(0.96, math.sqrt(1 - 0.96 ** 2), 0.0)
        v3 = vec(0.90, math.sqrt(0.19), 0.0)
        assert cosine_similarity(v1, v2) > 0.95
        assert cosine_similarity(v2, v3) > 0.95
        assert cosine_similarity(v1, v3) < 0.95  # linked only through B
        ra = TypedEdge(edge_type="supersession", from_id="a", to_id="x")
        rb = TypedEdge(edge_type="contradiction", from_id="b", to_id="x")
        rc = TypedEdge(edge_type="authorship", from_id="c", to_id="x")
        a = cand("a", "q q q", 0.9, v1, [ra])
        b = cand("b", "q q", 0.8, v2, [rb])
        c = cand("c", "q", 0.7, v3, [rc])
        out = Reranker().rerank("unrelated", [a, b, c])
        assert len(out) == 1
        survivor = out[0]
        assert survivor.fact_id == "a"
        assert {e.edge_type for e in survivor.relations} == {
            "supersession", "contradiction", "authorship"}

    def test_below_threshold_not_merged(self):
        v1 = vec(1.0, 0.0)
        v2 = vec(0.9, math.sqrt(0.19))
        out = Reranker().rerank("q", [cand("a", "x", 0.9, v1),
                                      cand("b", "y", 0.8, v2)])
        assert len(out) == 2

    def test_tie_breaks_by_smallest_id(self):
        v = vec(1.0, 0.0)
        out = Reranker().rerank("q", [cand("zz", "same text", 0.5, v),
                                      cand("aa", "same text", 0.5, v)])
        assert [c.fact_id for c in out] == ["aa"]


class TestCrossEncoder:
    def _client(self, handler):
        return httpx.Client(transport=httpx.MockTransport(handler))

    def test_scores_blend_and_reorder(self):
        def handler(request):
            body = json.loads(request.content)
            # reward the text containing "special"
            scores = [5.0 if "special" in t else -5.0 for t in body["texts"]]
            return httpx.Response(200, json={"scores": scores})

        low = cand("low", "the special answer", 0.1)
        high = cand("high", "generic filler text", 0.9)
        cfg = RerankConfig(cross_encoder_endpoint="http://ce.local/score")
        out = Reranker(cfg, http_client=self._client(handler)).rerank(
            "question", [low, high])
        assert [c.fact_id for c in out] == ["low", "high"]

    def test_sigmoid_of_median_margin(self):
        captured = {}

        def handler(request):
            captured["texts"] = json.loads(request.content)["texts"]
            return httpx.Response(200, json={"scores": [2.0, 0.0, -2.0]})

        cfg = RerankConfig(cross_encoder_endpoint="http://ce.local/score")
        rr = Reranker(cfg, http_client=self._client(handler))
        cands = [cand("a", "ta", 0.0), cand("b", "tb", 0.0), cand("c", "tc", 0.0)]
        scores = rr._cross_encode("q", cands, cfg)
        # median logit 0.0 -> margins 2, 0, -2
        assert scores["a"] == pytest.approx(1 / (1 + math.exp(-2)))
        assert scores["b"] == pytest.approx(0.5)
        assert scores["c"] == pytest.approx(1 / (1 + math.exp(2)))

    def test_batching(self):
        calls = []

        def handler(request):
            texts = json.loads(request.content)["texts"]
            calls.append(len(texts))
            return httpx.Response(200, json={"scores": [0.0] * len(texts)})

        cfg = RerankConfig(cross_encoder_endpoint="http://ce.local/score",
                           batch_size=4)
        rr = Reranker(cfg, http_client=self._client(handler))
        rr._cross_encode("q", [cand(f"c{i}", f"t{i}", 0.0) for i in range(10)], cfg)
        assert calls == [4, 4, 2]

    def test_failure_degrades_to_stage2(self):
        def handler(request):
            return httpx.Response(500)

        ledger = TraceLedger()
        cfg = RerankConfig(cross_encoder_endpoint="http://ce.local/score")
        rr = Reranker(cfg, ledger=ledger, http_client=self._client(handler))
        plain = Reranker(RerankConfig())
        cands = [cand("a", "alpha text", 0.9), cand("b", "beta text", 0.5)]
        out = rr.rerank("alpha", cands)
        baseline = plain.rerank("alpha", [cand("a", "alpha text", 0.9),
                                          cand("b", "beta text", 0.5)])
        assert [c.fact_id for c in out] == [c.fact_id for c in baseline]
        events = ledger.query(event_type="degraded_operation")
        assert any(e.payload.get("op") == "cross_encoder" for e in events)

    def test_wrong_batch_size_degrades(self):
        def handler(request):
            return httpx.Response(200, json={"scores": [1.0, 2.0, 3.0]})

        ledger = TraceLedger()
        cfg = RerankConfig(cross_encoder_endpoint="http://ce.local/score")
        rr = Reranker(cfg, ledger=ledger, http_client=self._client(handler))
        assert rr._cross_encode("q", [cand("a", "t", 0.0)], cfg) is None
