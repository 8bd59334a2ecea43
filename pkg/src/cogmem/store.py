"""Embedded dual-write memory store.

One `MemoryStore` per gateway namespace: a typed property graph, an exact
brute-force vector index (collections per entity type), and an incremental
BM25 inverted index over fact text. Writes serialize through a single lock;
reads see a consistent snapshot. Persistence is an append-only JSONL
write-ahead log plus periodic full snapshots.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import queue
import threading
from collections import defaultdict
from pathlib import Path
from typing import Callable, NamedTuple, Optional

import numpy as np

from .embeddings import EmbeddingVector, cosine_similarity
from .model import FactAssertion, TypedEdge, now_ms
from .trace import TraceLedger

logger = logging.getLogger(__name__)

SNAPSHOT_VERSION = 1

# Vector collections, one per vector-indexed entity field.
FACT_COLLECTION = "Fact_text"
ACTOR_COLLECTION = "Actor_display_name"
GOAL_COLLECTION = "Goal_title"
PROCEDURE_COLLECTION = "Procedure_name"
CLAIM_COLLECTION = "Claim_claim_text"
EVIDENCE_COLLECTION = "Evidence_ref_value"
ARTIFACT_COLLECTION = "Artifact_summary"

DEFAULT_DEDUP_THRESHOLD = 0.97


class IsolationPolicy(NamedTuple):
    level: str = "LOOSE"  # NONE | LOOSE | STRICT
    scope: str = "SESSION_KEY"  # GLOBAL | SESSION_KEY | ACTOR | SUBAGENT_INHERIT


def freshness(fact: FactAssertion, half_life_hours: float, now: Optional[int] = None) -> float:
    """Exponential freshness decay from the most recent touch timestamp."""
    now = now if now is not None else now_ms()
    ref = max(fact.last_used_ts, fact.update_ts, fact.ingest_ts)
    dt_hours = max(0.0, (now - ref) / 3_600_000.0)
    return math.exp(-math.log(2.0) / half_life_hours * dt_hours)


class GraphStore:
    """In-process property graph with bidirectional adjacency indexes."""

    def __init__(self):
        self.nodes: dict[str, tuple[str, dict]] = {}
        self.edges: dict[tuple, TypedEdge] = {}
        self._out: dict[str, set[tuple]] = defaultdict(set)
        self._in: dict[str, set[tuple]] = defaultdict(set)
        self._by_label: dict[str, set[str]] = defaultdict(set)

    def put_node(self, node_id: str, label: str, props: dict) -> None:
        existing = self.nodes.get(node_id)
        if existing is not None and existing[0] != label:
            raise ValueError(f"node {node_id} already exists with label {existing[0]}")
        self.nodes[node_id] = (label, dict(props))
        self._by_label[label].add(node_id)

    def get_node(self, node_id: str) -> Optional[tuple[str, dict]]:
        return self.nodes.get(node_id)

    def has_node(self, node_id: str) -> bool:
        return node_id in self.nodes

    def nodes_by_label(self, label: str) -> list[str]:
        return sorted(self._by_label.get(label, ()))

    def add_edge(self, edge: TypedEdge) -> bool:
        """Insert an edge; idempotent by (type, from, to, valid_from).

        Returns False when the identical edge already exists. Raises on a
        dangling endpoint.
        """
        key = edge.key()
        if key in self.edges:
            return False
        if edge.from_id not in self.nodes:
            raise KeyError(f"edge source {edge.from_id} not in graph")
        if edge.to_id not in self.nodes:
            raise KeyError(f"edge target {edge.to_id} not in graph")
        self.edges[key] = edge
        self._out[edge.from_id].add(key)
        self._in[edge.to_id].add(key)
        return True

    def replace_edge(self, old: TypedEdge, new: TypedEdge) -> None:
        """Swap an edge in place (used to close validity intervals)."""
        key = old.key()
        if key not in self.edges:
            raise KeyError(f"edge {key} not present")
        del self.edges[key]
        self._out[old.from_id].discard(key)
        self._in[old.to_id].discard(key)
        self.add_edge(new)

    def incident_edges(self, node_id: str) -> list[TypedEdge]:
        keys = self._out.get(node_id, set()) | self._in.get(node_id, set())
        return [self.edges[k] for k in sorted(keys)]

    def edges_from(self, node_id: str, edge_type: Optional[str] = None,
                   as_of: Optional[int] = None) -> list[TypedEdge]:
        out = [self.edges[k] for k in sorted(self._out.get(node_id, set()))]
        if edge_type is not None:
            out = [e for e in out if e.edge_type == edge_type]
        if as_of is not None:
            out = [e for e in out if e.live_at(as_of)]
        return out

    def edges_to(self, node_id: str, edge_type: Optional[str] = None,
                 as_of: Optional[int] = None) -> list[TypedEdge]:
        out = [self.edges[k] for k in sorted(self._in.get(node_id, set()))]
        if edge_type is not None:
            out = [e for e in out if e.edge_type == edge_type]
        if as_of is not None:
            out = [e for e in out if e.live_at(as_of)]
        return out

    def remove_node(self, node_id: str) -> int:
        """Remove a node and every incident edge; returns edges removed."""
        if node_id not in self.nodes:
            return 0
        keys = self._out.pop(node_id, set()) | self._in.pop(node_id, set())
        for key in keys:
            edge = self.edges.pop(key, None)
            if edge is None:
                continue
            self._out[edge.from_id].discard(key)
            self._in[edge.to_id].discard(key)
        label, _ = self.nodes.pop(node_id)
        self._by_label[label].discard(node_id)
        return len(keys)

    def integrity_sweep(self) -> list[str]:
        """Return ids referenced by edges but missing as nodes (must be [])."""
        missing = []
        for edge in self.edges.values():
            if edge.from_id not in self.nodes:
                missing.append(edge.from_id)
            if edge.to_id not in self.nodes:
                missing.append(edge.to_id)
        return missing


class VectorIndex:
    """Exact brute-force cosine index, partitioned into named collections."""

    def __init__(self):
        self._collections: dict[str, dict[str, tuple[EmbeddingVector, dict]]] = defaultdict(dict)
        # Test hook: raise on the next mutation.
        self.fail_next = False

    def _maybe_fail(self):
        if self.fail_next:
            self.fail_next = False
            raise RuntimeError("vector index failure (injected)")

    def upsert(self, collection: str, item_id: str, vector: EmbeddingVector,
               payload: Optional[dict] = None) -> None:
        self._maybe_fail()
        self._collections[collection][item_id] = (vector, payload or {})

    def delete(self, collection: str, item_id: str) -> bool:
        self._maybe_fail()
        return self._collections[collection].pop(item_id, None) is not None

    def get(self, collection: str, item_id: str) -> Optional[EmbeddingVector]:
        entry = self._collections[collection].get(item_id)
        return entry[0] if entry else None

    def contains(self, collection: str, item_id: str) -> bool:
        return item_id in self._collections[collection]

    def size(self, collection: str) -> int:
        return len(self._collections[collection])

    def top_k(
        self,
        collection: str,
        query: EmbeddingVector,
        k: int,
        filters: Optional[dict] = None,
        min_similarity: float = -1.0,
    ) -> list[tuple[str, float, dict]]:
        """Ids in non-increasing cosine order. Filters are exact-equality
        predicates plus optional ``{"ts_range": (lo, hi)}`` over payload "ts".
        """
        results = []
        for item_id, (vector, payload) in self._collections[collection].items():
            if filters:
                ok = True
                for field, expected in filters.items():
                    if field == "ts_range":
                        lo, hi = expected
                        ts = payload.get("ts")
                        if ts is None or not (lo <= ts <= hi):
                            ok = False
                            break
                    elif payload.get(field) != expected:
                        ok = False
                        break
                if not ok:
                    continue
            sim = cosine_similarity(query, vector)
            if sim >= min_similarity:
                results.append((item_id, sim, payload))
        results.sort(key=lambda r: (-r[1], r[0]))
        return results[:k]


class Bm25Index:
    """Incremental BM25 (k1=1.2, b=0.75) over whitespace/lowercase tokens."""

    def __init__(self, k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b
        self._docs: dict[str, list[str]] = {}
        self._df: dict[str, int] = defaultdict(int)
        self._total_len = 0

    @staticmethod
    def tokenize(text: str) -> list[str]:
        return text.lower().split()

    def add(self, doc_id: str, text: str) -> None:
        if doc_id in self._docs:
            self.remove(doc_id)
        tokens = self.tokenize(text)
        self._docs[doc_id] = tokens
        for term in set(tokens):
            self._df[term] += 1
        self._total_len += len(tokens)

    def remove(self, doc_id: str) -> None:
        tokens = self._docs.pop(doc_id, None)
        if tokens is None:
            return
        for term in set(tokens):
            self._df[term] -= 1
            if self._df[term] <= 0:
                del self._df[term]
        self._total_len -= len(tokens)

    def __len__(self) -> int:
        return len(self._docs)

    def score(self, query: str, doc_id: str) -> float:
        tokens = self._docs.get(doc_id)
        if not tokens:
            return 0.0
        n = len(self._docs)
        avgdl = self._total_len / n if n else 0.0
        dl = len(tokens)
        counts: dict[str, int] = defaultdict(int)
        for t in tokens:
            counts[t] += 1
        total = 0.0
        for term in self.tokenize(query):
            tf = counts.get(term, 0)
            if tf == 0:
                continue
            df = self._df.get(term, 0)
            idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
            denom = tf + self.k1 * (1 - self.b + self.b * dl / avgdl)
            total += idf * (tf * (self.k1 + 1)) / denom
        return total

    def search(self, query: str, k: int) -> list[tuple[str, float]]:
        scored = [(doc_id, self.score(query, doc_id)) for doc_id in self._docs]
        scored = [(d, s) for d, s in scored if s > 0.0]
        scored.sort(key=lambda r: (-r[1], r[0]))
        return scored[:k]


class StoreResult(NamedTuple):
    status: str  # "stored" | "deduplicated" | "updated"
    fact_id: str


class DeletionReport(NamedTuple):
    fact_id: str
    existed: bool
    edges_removed: int
    vector_deleted: bool


class MemoryStore:
    """Gateway-scoped facade over the graph, vector, and lexical indexes."""

    def __init__(
        self,
        gateway_id: str = "default",
        ledger: Optional[TraceLedger] = None,
        directory: Optional[str | Path] = None,
        clock: Callable[[], int] = now_ms,
    ):
        self.gateway_id = gateway_id
        self.ledger = ledger or TraceLedger()
        self.clock = clock
        self.graph = GraphStore()
        self.vectors = VectorIndex()
        self.bm25 = Bm25Index()
        self.facts: dict[str, FactAssertion] = {}
        self.auto_recall_blacklist: set[str] = set()
        self._lock = threading.RLock()
        self._use_queue: queue.Queue = queue.Queue(maxsize=10_000)
        self.directory = Path(directory) if directory else None
        self._wal_path = self.directory / f"{gateway_id}.wal.jsonl" if self.directory else None
        self._snapshot_path = self.directory / f"{gateway_id}.snapshot.jsonl" if self.directory else None
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)
            self._recover()

    # -- persistence ------------------------------------------------------

    def _wal_append(self, op: str, payload: dict) -> None:
        if not self._wal_path:
            return
        entry = {"op": op, "payload": payload, "ts": self.clock()}
        with self._wal_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def _recover(self) -> None:
        if self._snapshot_path and self._snapshot_path.exists():
            self.load_snapshot(self._snapshot_path)
        if self._wal_path and self._wal_path.exists():
            with self._wal_path.open(encoding="utf-8") as fh:
                for line in fh:
                    entry = json.loads(line)
                    self._replay(entry["op"], entry["payload"])

    def _replay(self, op: str, payload: dict) -> None:
        if op == "store_fact":
            fact = FactAssertion.model_validate(payload["fact"])
            vector = EmbeddingVector(payload["vector"])
            self._store_fact_locked(fact, vector, emit_wal=False)
        elif op == "forget":
            self._forget_locked(payload["fact_id"], emit_wal=False)
        elif op == "record_use":
            self._apply_use(payload["fact_id"], payload["successful"], emit_wal=False)
        elif op == "blacklist":
            self.auto_recall_blacklist.add(payload["fact_id"])

    def save_snapshot(self, path: Optional[str | Path] = None) -> Path:
        path = Path(path) if path else self._snapshot_path
        if path is None:
            raise ValueError("no snapshot path configured")
        with self._lock:
            with path.open("w", encoding="utf-8") as fh:
                fh.write(json.dumps({"version": SNAPSHOT_VERSION,
                                     "gateway_id": self.gateway_id}) + "\n")
                for node_id, (label, props) in self.graph.nodes.items():
                    vector = self.vectors.get(_collection_for_label(label), node_id)
                    fh.write(json.dumps({
                        "kind": "node", "id": node_id, "label": label,
                        "props": props,
                        "vector": vector.tolist() if vector else None,
                        "blacklisted": node_id in self.auto_recall_blacklist,
                    }, sort_keys=True) + "\n")
                for edge in self.graph.edges.values():
                    fh.write(json.dumps({"kind": "edge",
                                         **edge.model_dump(mode="json")},
                                        sort_keys=True) + "\n")
            if path == self._snapshot_path and self._wal_path and self._wal_path.exists():
                self._wal_path.unlink()
        return path

    def load_snapshot(self, path: str | Path) -> None:
        with Path(path).open(encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("version") != SNAPSHOT_VERSION:
                raise ValueError(f"unsupported snapshot version {header.get('version')}")
            pending_edges = []
            for line in fh:
                doc = json.loads(line)
                if doc["kind"] == "node":
                    label = doc["label"]
                    self.graph.put_node(doc["id"], label, doc["props"])
                    if doc.get("vector"):
                        collection = _collection_for_label(label)
                        payload = _vector_payload(label, doc["props"])
                        self.vectors.upsert(collection, doc["id"],
                                            EmbeddingVector(doc["vector"]), payload)
                    if label == "Fact":
                        fact = FactAssertion.model_validate(doc["props"])
                        self.facts[fact.id] = fact
                        self.bm25.add(fact.id, fact.text)
                    if doc.get("blacklisted"):
                        self.auto_recall_blacklist.add(doc["id"])
                else:
                    pending_edges.append(TypedEdge.model_validate(
                        {k: v for k, v in doc.items() if k != "kind"}))
            for edge in pending_edges:
                self.graph.add_edge(edge)

    # -- fact lifecycle ---------------------------------------------------

    def store_fact(
        self,
        fact: FactAssertion,
        embedding: EmbeddingVector,
        dedup_threshold: float = DEFAULT_DEDUP_THRESHOLD,
    ) -> StoreResult:
        if not 0.0 < dedup_threshold <= 1.0:
            raise ValueError("dedup_threshold must be in (0,1]")
        with self._lock:
            return self._store_fact_locked(fact, embedding,
                                           dedup_threshold=dedup_threshold)

    def _store_fact_locked(
        self,
        fact: FactAssertion,
        embedding: EmbeddingVector,
        dedup_threshold: Optional[float] = None,
        emit_wal: bool = True,
    ) -> StoreResult:
        is_update = fact.id in self.facts
        if dedup_threshold is not None and not is_update:
            nearest = self.vectors.top_k(FACT_COLLECTION, embedding, 1)
            if nearest and nearest[0][1] >= dedup_threshold:
                existing_id = nearest[0][0]
                self.ledger.emit(
                    "fact_deduplicated",
                    {"candidate_text_hash": _text_hash(fact.text),
                     "existing_id": existing_id,
                     "similarity": nearest[0][1]},
                    session_key=fact.session_key, gateway_id=self.gateway_id,
                )
                return StoreResult("deduplicated", existing_id)

        # Dual write: vector first so a vector failure leaves no orphan node.
        self.vectors.upsert(FACT_COLLECTION, fact.id, embedding, {
            "session_key": fact.session_key,
            "actor": fact.source_actor,
            "scope": fact.scope.value,
            "memory_class": fact.memory_class.value,
            "category": fact.category,
            "gateway_id": fact.gateway_id or self.gateway_id,
            "ts": fact.ingest_ts,
        })
        self.graph.put_node(fact.id, "Fact", fact.model_dump(mode="json"))
        self.facts[fact.id] = fact
        self.bm25.add(fact.id, fact.text)
        if emit_wal:
            self._wal_append("store_fact", {"fact": fact.model_dump(mode="json"),
                                            "vector": embedding.tolist()})
        if not is_update:
            self._provenance_edges(fact)
        self.ledger.emit(
            "fact_updated" if is_update else "fact_stored",
            {"fact_id": fact.id, "category": fact.category},
            session_key=fact.session_key, gateway_id=self.gateway_id,
        )
        return StoreResult("updated" if is_update else "stored", fact.id)

    def _provenance_edges(self, fact: FactAssertion) -> None:
        """Best-effort authorship / actor_about / goal_serving edges."""
        wanted = []
        if fact.source_actor:
            wanted.append(TypedEdge(edge_type="authorship", from_id=fact.source_actor,
                                    to_id=fact.id, valid_from=fact.ingest_ts))
        for actor in fact.about_actors:
            wanted.append(TypedEdge(edge_type="actor_about", from_id=fact.id,
                                    to_id=actor, valid_from=fact.ingest_ts))
        for link in fact.goal_links:
            wanted.append(TypedEdge(
                edge_type="goal_serving", from_id=fact.id, to_id=link.goal_id,
                valid_from=fact.ingest_ts, properties={"strength": link.strength}))
        for edge in wanted:
            try:
                self.graph.add_edge(edge)
            except KeyError as exc:
                logger.warning("provenance edge skipped: %s", exc)
                self.ledger.emit(
                    "degraded_operation",
                    {"component": "memory_store", "op": "provenance_edge",
                     "edge_type": edge.edge_type, "reason": str(exc)},
                    session_key=fact.session_key, gateway_id=self.gateway_id,
                )

    def update_fact(self, fact_id: str, **changes) -> Optional[FactAssertion]:
        """Property update with upsert semantics; no new vector unless text
        changes (callers re-embed and use store_fact for text changes)."""
        with self._lock:
            fact = self.facts.get(fact_id)
            if fact is None:
                return None
            changes.setdefault("update_ts", self.clock())
            updated = fact.model_copy(update=changes)
            self.facts[fact_id] = updated
            self.graph.put_node(fact_id, "Fact", updated.model_dump(mode="json"))
            vec = self.vectors.get(FACT_COLLECTION, fact_id)
            if vec is not None:
                self._store_vector_payload_refresh(updated, vec)
            self._wal_append("store_fact", {"fact": updated.model_dump(mode="json"),
                                            "vector": vec.tolist() if vec else []})
            return updated

    def _store_vector_payload_refresh(self, fact: FactAssertion, vec: EmbeddingVector):
        self.vectors.upsert(FACT_COLLECTION, fact.id, vec, {
            "session_key": fact.session_key,
            "actor": fact.source_actor,
            "scope": fact.scope.value,
            "memory_class": fact.memory_class.value,
            "category": fact.category,
            "gateway_id": fact.gateway_id or self.gateway_id,
            "ts": fact.ingest_ts,
        })

    def forget(self, fact_id: str) -> DeletionReport:
        with self._lock:
            return self._forget_locked(fact_id)

    def _forget_locked(self, fact_id: str, emit_wal: bool = True) -> DeletionReport:
        existed = fact_id in self.facts or self.graph.has_node(fact_id)
        if not existed:
            return DeletionReport(fact_id, False, 0, False)
        edges_removed = self.graph.remove_node(fact_id)
        self.facts.pop(fact_id, None)
        self.bm25.remove(fact_id)
        self.auto_recall_blacklist.discard(fact_id)
        vector_deleted = False
        try:
            vector_deleted = self.vectors.delete(FACT_COLLECTION, fact_id)
        except Exception as exc:
            logger.warning("vector delete failed for %s: %s", fact_id, exc)
            self.ledger.emit("degraded_operation",
                             {"component": "memory_store", "op": "vector_delete"},
                             gateway_id=self.gateway_id)
        if emit_wal:
            self._wal_append("forget", {"fact_id": fact_id})
        # Data minimization: record only the id hash, never content.
        self.ledger.emit("gdpr_deletion",
                         {"id_hash": _text_hash(fact_id),
                          "edges_removed": edges_removed},
                         gateway_id=self.gateway_id)
        return DeletionReport(fact_id, True, edges_removed, vector_deleted)

    # -- use counting (fire-and-forget) ------------------------------------

    def record_use(self, fact_id: str, successful: bool) -> None:
        """Queue a use-count increment; returns immediately."""
        self._use_queue.put((fact_id, successful))

    def record_recall(self, fact_id: str) -> None:
        self._use_queue.put((fact_id, None))

    def flush_use_counts(self) -> int:
        """Drain the use queue; the test-visible barrier."""
        drained = 0
        while True:
            try:
                fact_id, successful = self._use_queue.get_nowait()
            except queue.Empty:
                return drained
            with self._lock:
                self._apply_use(fact_id, successful)
            drained += 1

    def _apply_use(self, fact_id: str, successful: Optional[bool],
                   emit_wal: bool = True) -> None:
        fact = self.facts.get(fact_id)
        if fact is None:
            self.ledger.emit("record_use_dropped", {"id_hash": _text_hash(fact_id)},
                             gateway_id=self.gateway_id)
            return
        now = self.clock()
        if successful is None:
            updated = fact.model_copy(update={"recall_count": fact.recall_count + 1})
        else:
            updated = fact.model_copy(update={
                "use_count": fact.use_count + 1,
                "successful_use_count": fact.successful_use_count + (1 if successful else 0),
                "last_used_ts": now,
            })
        self.facts[fact_id] = updated
        self.graph.put_node(fact_id, "Fact", updated.model_dump(mode="json"))
        if emit_wal:
            self._wal_append("record_use", {"fact_id": fact_id,
                                            "successful": successful})

    def blacklist_auto_recall(self, fact_id: str) -> None:
        with self._lock:
            self.auto_recall_blacklist.add(fact_id)
            self._wal_append("blacklist", {"fact_id": fact_id})

    # -- structural queries -------------------------------------------------

    def query_structural(
        self,
        filters: Optional[dict] = None,
        limit: int = 50,
        half_life_hours: float = 24.0,
        include_archived: bool = False,
        now: Optional[int] = None,
    ) -> list[tuple[FactAssertion, float]]:
        """Predicate-filtered facts with attached freshness, newest first.

        Supported filter keys: session_key, actor, memory_class, scope,
        category, as_of_ts.
        """
        if limit <= 0:
            raise ValueError("limit must be > 0")
        filters = filters or {}
        as_of = filters.get("as_of_ts")
        now = now if now is not None else self.clock()
        out = []
        with self._lock:
            candidates = list(self.facts.values())
        for fact in candidates:
            if fact.archived and not include_archived:
                continue
            if as_of is not None and fact.ingest_ts > as_of:
                continue
            if "session_key" in filters and fact.session_key != filters["session_key"]:
                continue
            if "actor" in filters and fact.source_actor != filters["actor"]:
                continue
            if "memory_class" in filters and fact.memory_class.value != str(filters["memory_class"]):
                continue
            if "scope" in filters and fact.scope.value != str(filters["scope"]):
                continue
            if "category" in filters and fact.category != filters["category"]:
                continue
            out.append((fact, freshness(fact, half_life_hours, now)))
        out.sort(key=lambda item: (-item[0].ingest_ts, item[0].id))
        return out[:limit]

    def get_fact(self, fact_id: str) -> Optional[FactAssertion]:
        with self._lock:
            return self.facts.get(fact_id)

    def all_facts(self) -> list[FactAssertion]:
        with self._lock:
            return sorted(self.facts.values(), key=lambda f: f.id)


def _collection_for_label(label: str) -> str:
    return {
        "Fact": FACT_COLLECTION,
        "Actor": ACTOR_COLLECTION,
        "Goal": GOAL_COLLECTION,
        "Procedure": PROCEDURE_COLLECTION,
        "Claim": CLAIM_COLLECTION,
        "Evidence": EVIDENCE_COLLECTION,
        "Artifact": ARTIFACT_COLLECTION,
    }.get(label, f"{label}_text")


def _vector_payload(label: str, props: dict) -> dict:
    if label == "Fact":
        return {
            "session_key": props.get("session_key", ""),
            "actor": props.get("source_actor", ""),
            "scope": props.get("scope", ""),
            "memory_class": props.get("memory_class", ""),
            "category": props.get("category", ""),
            "gateway_id": props.get("gateway_id", ""),
            "ts": props.get("ingest_ts", 0),
        }
    return {"ts": props.get("ingest_ts", 0)}


def _text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:32]
