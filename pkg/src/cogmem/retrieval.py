"""Concurrent multi-source recall with weighted max-merge.

Five sources run in parallel (structural filters, keyword BM25, semantic
vectors, graph neighborhood, artifact summaries). Each contributes raw
scores in [0,1]; merging keeps, per fact, the maximum of raw x source
weight. A failed or slow source is dropped with a degraded_operation event,
never an exception.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .embeddings import EmbeddingService, EmbeddingVector, cosine_similarity
from .model import FactAssertion, TypedEdge
from .profiles import (  # noqa: F401  (re-exported: policy types live with profiles)
    AUTO_RECALL_MIN_SIMILARITY,
    AUTO_RECALL_TOP_K,
    RetrievalPolicy,
    SourcePolicy,
    auto_recall_policy,
)
from .store import ARTIFACT_COLLECTION, FACT_COLLECTION, IsolationPolicy, MemoryStore

SOURCE_NAMES = ("structural", "keyword", "semantic", "graph", "artifact")

SOURCE_TIMEOUT_MS = 250

GRAPH_HOP_DECAY = 0.7
HYBRID_GLOBAL_DAMPING = 0.5


@dataclass
class RetrievedCandidate:
    fact_id: str
    text: str
    raw_score: float
    weighted_score: float
    source_set: set[str]
    embedding: Optional[EmbeddingVector] = None
    relations: list[TypedEdge] = field(default_factory=list)
    token_count: int = 0
    fact: Optional[FactAssertion] = None


class Retriever:
    def __init__(
        self,
        store: MemoryStore,
        embeddings: EmbeddingService,
        half_life_hours: float = 24.0,
        timeout_ms: int = SOURCE_TIMEOUT_MS,
    ):
        self.store = store
        self.embeddings = embeddings
        self.half_life_hours = half_life_hours
        self.timeout_ms = timeout_ms

    def retrieve(
        self,
        query: str,
        policy: RetrievalPolicy,
        isolation: IsolationPolicy,
        session_key: str = "",
        actor: str = "",
    ) -> list[RetrievedCandidate]:
        if not query:
            raise ValueError("query must be non-empty")
        strict = isolation.level == "STRICT"
        query_vec = self._safe_embed(query)

        sources: dict[str, Callable[[], list[RetrievedCandidate]]] = {}
        if self._enabled(policy, "structural"):
            sources["structural"] = lambda: self._structural(
                policy, session_key, actor)
        if self._enabled(policy, "keyword") and not strict:
            sources["keyword"] = lambda: self._keyword(query, policy)
        if self._enabled(policy, "semantic") and query_vec is not None:
            sources["semantic"] = lambda: self._semantic(
                query_vec, policy, strict, session_key, actor)
        if self._enabled(policy, "artifact") and query_vec is not None:
            sources["artifact"] = lambda: self._artifact(query_vec, policy)

        results = self._fan_out(sources)

        # The graph source expands around whatever the semantic pass found,
        # so it runs after the first fan-in.
        if self._enabled(policy, "graph") and policy.graph_depth >= 1:
            seeds = [c.fact_id for c in results.get("semantic", [])[:5]]
            if seeds:
                graph_results = self._fan_out({
                    "graph": lambda: self.graph_expand(
                        seeds, policy.graph_depth, policy.graph_mode)})
                results.update(graph_results)

        merged: dict[str, RetrievedCandidate] = {}
        for name, candidates in results.items():
            weight = policy.sources[name].weight
            for cand in candidates:
                weighted = cand.raw_score * weight
                existing = merged.get(cand.fact_id)
                if existing is None:
                    merged[cand.fact_id] = replace(
                        cand, weighted_score=weighted, source_set={name})
                else:
                    existing.source_set.add(name)
                    if weighted > existing.weighted_score:
                        existing.weighted_score = weighted
                        existing.raw_score = cand.raw_score

        candidates = list(merged.values())
        if isolation.level == "LOOSE":
            candidates = [c for c in candidates
                          if self._visible_loose(c, session_key, actor)]
        self._hydrate(candidates)
        if policy.min_similarity > 0 and query_vec is not None:
            candidates = [
                c for c in candidates
                if c.embedding is not None
                and cosine_similarity(query_vec, c.embedding) >= policy.min_similarity]
        candidates.sort(key=lambda c: (-c.weighted_score, c.fact_id))
        return candidates[:policy.max_candidates]

    def graph_expand(self, seed_ids: list[str], depth: int,
                     mode: str = "LOCAL") -> list[RetrievedCandidate]:
        """Breadth-first over typed edges; raw score decays 0.7 per hop.

        LOCAL stays within the seeds' sessions, GLOBAL ignores session, and
        HYBRID unions both with global-only reach damped by 0.5.
        """
        if depth < 1:
            raise ValueError("graph expansion depth must be >= 1")
        if mode == "HYBRID":
            local = {c.fact_id: c for c in self.graph_expand(seed_ids, depth, "LOCAL")}
            for cand in self.graph_expand(seed_ids, depth, "GLOBAL"):
                if cand.fact_id not in local:
                    cand.raw_score *= HYBRID_GLOBAL_DAMPING
                    local[cand.fact_id] = cand
            return list(local.values())

        seed_sessions = set()
        frontier = []
        for seed in seed_ids:
            fact = self.store.get_fact(seed)
            if fact is None:
                continue
            seed_sessions.add(fact.session_key)
            frontier.append(seed)
        visited = set(frontier)
        scores: dict[str, float] = {}
        score = 1.0
        for _ in range(depth):
            score *= GRAPH_HOP_DECAY
            next_frontier = []
            for node in frontier:
                for edge in (self.store.graph.edges_from(node)
                             + self.store.graph.edges_to(node)):
                    for other in (edge.from_id, edge.to_id):
                        if other in visited:
                            continue
                        fact = self.store.get_fact(other)
                        if fact is None or fact.archived:
                            continue
                        if mode == "LOCAL" and fact.session_key not in seed_sessions:
                            continue
                        visited.add(other)
                        scores[other] = score
                        next_frontier.append(other)
            frontier = next_frontier
        out = []
        for fact_id, raw in scores.items():
            fact = self.store.get_fact(fact_id)
            out.append(RetrievedCandidate(
                fact_id=fact_id, text=fact.text, raw_score=raw,
                weighted_score=raw, source_set={"graph"},
                token_count=fact.token_count, fact=fact))
        return out

    # source implementations

    def _structural(self, policy, session_key, actor):
        filters = {}
        if session_key:
            filters["session_key"] = session_key
        if actor:
            filters["actor"] = actor
        hits = self.store.query_structural(
            filters, limit=policy.sources["structural"].fetch_count,
            half_life_hours=self.half_life_hours)
        return [RetrievedCandidate(
            fact_id=f.id, text=f.text, raw_score=fresh, weighted_score=fresh,
            source_set={"structural"}, token_count=f.token_count, fact=f)
            for f, fresh in hits]

    def _keyword(self, query, policy):
        hits = self.store.bm25.search(query, policy.sources["keyword"].fetch_count)
        out = []
        for doc_id, score in hits:
            fact = self.store.get_fact(doc_id)
            if fact is None:
                continue
            raw = score / (score + 1.0)  # squash unbounded BM25 into [0,1)
            out.append(RetrievedCandidate(
                fact_id=doc_id, text=fact.text, raw_score=raw, weighted_score=raw,
                source_set={"keyword"}, token_count=fact.token_count, fact=fact))
        return out

    def _semantic(self, query_vec, policy, strict, session_key, actor):
        filters = None
        if strict:
            filters = {}
            if session_key:
                filters["session_key"] = session_key
            if actor:
                filters["actor"] = actor
        hits = self.store.vectors.top_k(
            FACT_COLLECTION, query_vec,
            policy.sources["semantic"].fetch_count, filters=filters)
        out = []
        for doc_id, sim, _payload in hits:
            fact = self.store.get_fact(doc_id)
            if fact is None:
                continue
            out.append(RetrievedCandidate(
                fact_id=doc_id, text=fact.text, raw_score=max(sim, 0.0),
                weighted_score=sim, source_set={"semantic"},
                token_count=fact.token_count, fact=fact))
        return out

    def _artifact(self, query_vec, policy):
        hits = self.store.vectors.top_k(
            ARTIFACT_COLLECTION, query_vec,
            policy.sources["artifact"].fetch_count)
        out = []
        for doc_id, sim, _payload in hits:
            node = self.store.graph.get_node(doc_id)
            props = node[1] if node else {}
            out.append(RetrievedCandidate(
                fact_id=doc_id, text=props.get("summary", ""),
                raw_score=max(sim, 0.0), weighted_score=sim,
                source_set={"artifact"},
                token_count=int(props.get("token_count", 0))))
        return out

    # plumbing

    def _enabled(self, policy, name):
        source = policy.sources.get(name)
        return source is not None and source.enabled

    def _fan_out(self, sources) -> dict[str, list[RetrievedCandidate]]:
        results: dict[str, list[RetrievedCandidate]] = {}
        if not sources:
            return results
        with ThreadPoolExecutor(max_workers=len(sources)) as pool:
            futures = {name: pool.submit(fn) for name, fn in sources.items()}
            for name, future in futures.items():
                try:
                    results[name] = future.result(timeout=self.timeout_ms / 1000)
                except Exception as exc:
                    self.store.ledger.emit("degraded_operation", {
                        "op": "retrieval_source", "source": name,
                        "error": type(exc).__name__,
                    }, gateway_id=self.store.gateway_id)
        return results

    def _safe_embed(self, query) -> Optional[EmbeddingVector]:
        try:
            return self.embeddings.embed_one(query)
        except Exception as exc:
            self.store.ledger.emit("degraded_operation", {
                "op": "retrieval_query_embedding", "error": type(exc).__name__,
            }, gateway_id=self.store.gateway_id)
            return None

    def _visible_loose(self, cand, session_key, actor):
        fact = cand.fact or self.store.get_fact(cand.fact_id)
        if fact is None:
            return True  # artifacts and other non-fact hits pass through
        if not fact.session_key or fact.session_key == session_key:
            return True
        return bool(actor) and fact.source_actor == actor

    def _hydrate(self, candidates):
        for cand in candidates:
            if cand.embedding is None:
                collection = (FACT_COLLECTION if cand.fact is not None
                              else ARTIFACT_COLLECTION)
                cand.embedding = (self.store.vectors.get(collection, cand.fact_id)
                                  or self.store.vectors.get(FACT_COLLECTION,
                                                            cand.fact_id))
            if not cand.relations and cand.fact is not None:
                cand.relations = self.store.graph.incident_edges(cand.fact_id)
