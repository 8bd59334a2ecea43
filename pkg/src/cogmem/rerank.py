"""Four-stage precision pass over retrieved candidates.

Stage 1 is a cheap lexical blend used to prune, stage 2 blends in semantic
similarity, stage 3 consults an optional external cross-encoder, and stage 4
merges near-duplicates with union-find. Every stage degrades to its input
ordering instead of failing.
"""

from __future__ import annotations

import math
import statistics
from typing import Optional

import httpx
from pydantic import BaseModel

from .embeddings import EmbeddingVector, cosine_similarity
from .retrieval import RetrievedCandidate
from .trace import TraceLedger


class RerankConfig(BaseModel, frozen=True):
    prune_cap: int = 20
    blend_alpha: float = 0.7
    cross_encoder_endpoint: Optional[str] = None
    batch_size: int = 16
    timeout_ms: int = 1000
    dup_threshold: float = 0.95


def token_overlap(a: str, b: str) -> float:
    """Jaccard over lowercased whitespace tokens; two empties are 0."""
    ta, tb = set(a.lower().split()), set(b.lower().split())
    if not ta and not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


class _UnionFind:
    def __init__(self, ids):
        self.parent = {i: i for i in ids}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


class Reranker:
    def __init__(self, config: Optional[RerankConfig] = None,
                 ledger: Optional[TraceLedger] = None,
                 http_client: Optional[httpx.Client] = None):
        self.config = config or RerankConfig()
        self.ledger = ledger
        self._http = http_client

    def rerank(
        self,
        query: str,
        candidates: list[RetrievedCandidate],
        query_embedding: Optional[EmbeddingVector] = None,
        config: Optional[RerankConfig] = None,
    ) -> list[RetrievedCandidate]:
        cfg = config or self.config
        if not candidates:
            return []

        # Stage 1: lexical prune.
        stage1 = {
            c.fact_id: 0.5 * token_overlap(query, c.text) + 0.5 * c.weighted_score
            for c in candidates
        }
        survivors = sorted(candidates,
                           key=lambda c: (-stage1[c.fact_id], c.fact_id))
        survivors = survivors[:cfg.prune_cap]

        # Stage 2: semantic blend.
        alpha = cfg.blend_alpha
        stage2 = {}
        for c in survivors:
            if query_embedding is not None and c.embedding is not None:
                sem = max(cosine_similarity(query_embedding, c.embedding), 0.0)
                stage2[c.fact_id] = alpha * sem + (1 - alpha) * stage1[c.fact_id]
            else:
                stage2[c.fact_id] = stage1[c.fact_id]

        # Stage 3: cross-encoder, or the stage-2 order when unavailable.
        scores = stage2
        if cfg.cross_encoder_endpoint:
            encoded = self._cross_encode(query, survivors, cfg)
            if encoded is not None:
                scores = {c.fact_id: 0.5 * encoded[c.fact_id] + 0.5 * stage2[c.fact_id]
                          for c in survivors}

        # Stage 4: union-find near-duplicate merge.
        uf = _UnionFind([c.fact_id for c in survivors])
        for i, a in enumerate(survivors):
            for b in survivors[i + 1:]:
                if a.embedding is None or b.embedding is None:
                    continue
                if cosine_similarity(a.embedding, b.embedding) > cfg.dup_threshold:
                    uf.union(a.fact_id, b.fact_id)
        clusters: dict[str, list[RetrievedCandidate]] = {}
        for c in survivors:
            clusters.setdefault(uf.find(c.fact_id), []).append(c)
        merged = []
        for members in clusters.values():
            members.sort(key=lambda c: (-scores[c.fact_id], c.fact_id))
            survivor = members[0]
            for loser in members[1:]:
                survivor.source_set |= loser.source_set
                seen = {e.key() for e in survivor.relations}
                survivor.relations.extend(
                    e for e in loser.relations if e.key() not in seen)
            merged.append(survivor)

        merged.sort(key=lambda c: (-scores[c.fact_id], c.fact_id))
        return merged

    def _cross_encode(self, query, survivors, cfg) -> Optional[dict[str, float]]:
        """POST {query, texts[]} -> {scores[]} of raw logits; sigmoid over the
        margin against the batch median."""
        client = self._http or httpx.Client()
        logits: list[float] = []
        try:
            for start in range(0, len(survivors), cfg.batch_size):
                batch = survivors[start:start + cfg.batch_size]
                resp = client.post(
                    cfg.cross_encoder_endpoint,
                    json={"query": query, "texts": [c.text for c in batch]},
                    timeout=cfg.timeout_ms / 1000)
                resp.raise_for_status()
                body = resp.json()["scores"]
                if len(body) != len(batch):
                    raise ValueError("cross-encoder returned wrong batch size")
                logits.extend(float(s) for s in body)
        except Exception as exc:
            if self.ledger is not None:
                self.ledger.emit("degraded_operation", {
                    "op": "cross_encoder", "error": type(exc).__name__})
            return None
        finally:
            if self._http is None:
                client.close()
        median = statistics.median(logits) if logits else 0.0
        return {
            c.fact_id: 1.0 / (1.0 + math.exp(-(logit - median)))
            for c, logit in zip(survivors, logits)
        }
