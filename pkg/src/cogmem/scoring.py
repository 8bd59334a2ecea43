"""Two-pass relevance scoring and budget-constrained working-set selection.

Pass 1 scores each candidate on nine independent dimensions weighted by the
active profile. Pass 2 runs a greedy loop that adds interaction penalties
(redundancy and contradiction against already-selected items) and recomputes
the cost dimension against the budget still remaining at that step.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .embeddings import EmbeddingService, EmbeddingVector, cosine_similarity
from .evidence import EvidenceEngine
from .model import FactAssertion, MemoryClass
from .profiles import ProfilePolicy
from .retrieval import RetrievedCandidate
from .store import MemoryStore, freshness

PASS1_DIMENSIONS = (
    "turn_relevance",
    "session_goal_relevance",
    "global_goal_relevance",
    "recency",
    "successful_use",
    "confidence",
    "evidence_strength",
    "novelty",
    "cost_penalty",
)

NEUTRAL_USE_PRIOR = 0.5

# Pass-2 penalty magnitudes; final contribution = profile weight x magnitude.
SUPERSESSION_PENALTY = 1.0
CONTRADICTION_EDGE_PENALTY = 0.9
SEMANTIC_CONTRADICTION_PENALTY = 0.7


@dataclass
class GoalSnapshot:
    goal_id: str
    title: str
    embedding: Optional[EmbeddingVector] = None
    parent_id: Optional[str] = None


@dataclass
class ScoringContext:
    evidence_counts: dict[str, int] = field(default_factory=dict)
    verification_multipliers: dict[str, float] = field(default_factory=dict)
    conflict_pairs: set[tuple[str, str, str]] = field(default_factory=set)
    session_goals: list[GoalSnapshot] = field(default_factory=list)
    persistent_goals: list[GoalSnapshot] = field(default_factory=list)
    turn_embedding: Optional[EmbeddingVector] = None
    compacted_ids: set[str] = field(default_factory=set)
    now_ts: int = 0
    degraded: list[str] = field(default_factory=list)

    def conflicts_with(self, a: str, b: str) -> Optional[str]:
        """Worst conflict kind between two facts, either direction."""
        kinds = {k for (x, y, k) in self.conflict_pairs
                 if {x, y} == {a, b}}
        if "supersession" in kinds:
            return "supersession"
        if "contradiction" in kinds:
            return "contradiction"
        return None


@dataclass
class ScoredCandidate:
    candidate: RetrievedCandidate
    dims: dict[str, float]
    pass1_sum: float
    final_score: float = 0.0
    mandatory: bool = False

    @property
    def fact_id(self) -> str:
        return self.candidate.fact_id

    @property
    def token_count(self) -> int:
        return self.candidate.token_count


@dataclass
class WorkingSet:
    items: list[ScoredCandidate]
    budget_tokens: int
    used_tokens: int
    over_allocated: bool


def build_scoring_context(
    store: MemoryStore,
    evidence: EvidenceEngine,
    embeddings: EmbeddingService,
    turn_text: str,
    session_goals: Optional[list[dict]] = None,
    persistent_goals: Optional[list[dict]] = None,
    compacted_ids: Optional[set[str]] = None,
    now_ts: Optional[int] = None,
) -> ScoringContext:
    """Fan out the store reads concurrently, then make a single batch
    embedding call covering the turn text and every goal title."""
    ctx = ScoringContext(now_ts=now_ts if now_ts is not None else store.clock())
    session_goals = session_goals or []
    persistent_goals = persistent_goals or []

    def fact_ids():
        return [f.id for f in store.all_facts()]

    def conflict_pairs():
        pairs = set()
        for fact in store.all_facts():
            for kind in ("supersession", "contradiction"):
                for edge in store.graph.edges_from(fact.id, kind):
                    pairs.add((edge.from_id, edge.to_id, kind))
        return pairs

    queries = {
        "evidence_counts": lambda: {fid: evidence.evidence_count(fid)
                                    for fid in fact_ids()},
        "multipliers": lambda: {fid: evidence.confidence_multiplier(fid)
                                for fid in fact_ids()},
        "conflict_pairs": conflict_pairs,
        "session_goals": lambda: [GoalSnapshot(g["id"], g.get("title", ""),
                                               parent_id=g.get("parent_id"))
                                  for g in session_goals],
        "persistent_goals": lambda: [GoalSnapshot(g["id"], g.get("title", ""))
                                     for g in persistent_goals],
        "compacted_ids": lambda: set(compacted_ids or ()),
    }
    results = {}
    with ThreadPoolExecutor(max_workers=len(queries)) as pool:
        futures = {name: pool.submit(fn) for name, fn in queries.items()}
        for name, future in futures.items():
            try:
                results[name] = future.result()
            except Exception as exc:
                results[name] = None
                ctx.degraded.append(name)
                store.ledger.emit("degraded_operation", {
                    "op": "scoring_context", "slot": name,
                    "error": type(exc).__name__,
                }, gateway_id=store.gateway_id)

    ctx.evidence_counts = results["evidence_counts"] or {}
    ctx.verification_multipliers = results["multipliers"] or {}
    ctx.conflict_pairs = results["conflict_pairs"] or set()
    ctx.session_goals = results["session_goals"] or []
    ctx.persistent_goals = results["persistent_goals"] or []
    ctx.compacted_ids = results["compacted_ids"] or set()

    texts = [turn_text] + [g.title for g in ctx.session_goals] \
        + [g.title for g in ctx.persistent_goals]
    try:
        vectors = embeddings.embed_batch(texts)
    except Exception as exc:
        ctx.degraded.append("embeddings")
        store.ledger.emit("degraded_operation", {
            "op": "scoring_context", "slot": "embeddings",
            "error": type(exc).__name__,
        }, gateway_id=store.gateway_id)
        return ctx
    ctx.turn_embedding = vectors[0]
    cursor = 1
    for goal in ctx.session_goals:
        goal.embedding = vectors[cursor]
        cursor += 1
    for goal in ctx.persistent_goals:
        goal.embedding = vectors[cursor]
        cursor += 1
    return ctx


def _goal_relevance(candidate: RetrievedCandidate,
                    goals: list[GoalSnapshot],
                    apply_parent_bonus: bool) -> float:
    fact = candidate.fact
    by_id = {g.goal_id: g for g in goals}
    best = 0.0
    direct_hits: dict[str, float] = {}
    if fact is not None:
        for link in fact.goal_links:
            if link.goal_id in by_id:
                tag = 1.0 if link.strength == "direct" else 0.7
                direct_hits[link.goal_id] = tag
                best = max(best, tag)
    if candidate.embedding is not None:
        for goal in goals:
            if goal.embedding is not None:
                best = max(best, max(
                    cosine_similarity(candidate.embedding, goal.embedding), 0.0))
    if apply_parent_bonus:
        # A tagged child goal lends 0.7x its score to each ancestor link.
        for goal_id, score in list(direct_hits.items()):
            parent = by_id[goal_id].parent_id
            bonus = score
            while parent is not None and parent in by_id:
                bonus *= 0.7
                best = max(best, bonus)
                parent = by_id[parent].parent_id
    return min(best, 1.0)


def score_pass1(
    candidate: RetrievedCandidate,
    ctx: ScoringContext,
    profile: ProfilePolicy,
    remaining_budget: Optional[int] = None,
) -> ScoredCandidate:
    fact = candidate.fact
    budget = remaining_budget if remaining_budget is not None \
        else profile.budget_tokens

    if ctx.turn_embedding is not None and candidate.embedding is not None:
        turn_rel = max(cosine_similarity(ctx.turn_embedding, candidate.embedding), 0.0)
    else:
        turn_rel = 0.0

    session_rel = _goal_relevance(candidate, ctx.session_goals,
                                  apply_parent_bonus=True)
    global_rel = _goal_relevance(candidate, ctx.persistent_goals,
                                 apply_parent_bonus=False)

    if fact is not None:
        rec = freshness(fact, profile.half_life_hours, ctx.now_ts)
        use = (fact.successful_use_count / fact.use_count
               if fact.use_count > 0 else NEUTRAL_USE_PRIOR)
        multiplier = ctx.verification_multipliers.get(candidate.fact_id, 0.8)
        conf = fact.confidence * multiplier
    else:
        rec, use, conf = 1.0, NEUTRAL_USE_PRIOR, 0.5

    refs = ctx.evidence_counts.get(candidate.fact_id, 0)
    strength = min(1.0, refs / profile.evidence_refs_max)
    novelty = 0.0 if candidate.fact_id in ctx.compacted_ids else 1.0
    cost = candidate.token_count / budget if budget > 0 else math.inf

    dims = {
        "turn_relevance": turn_rel,
        "session_goal_relevance": session_rel,
        "global_goal_relevance": global_rel,
        "recency": rec,
        "successful_use": use,
        "confidence": conf,
        "evidence_strength": strength,
        "novelty": novelty,
        "cost_penalty": cost,
    }
    pass1 = sum(profile.weights[d] * dims[d] for d in PASS1_DIMENSIONS)
    mandatory = fact is not None and fact.memory_class == MemoryClass.POLICY
    return ScoredCandidate(candidate=candidate, dims=dims, pass1_sum=pass1,
                           final_score=pass1, mandatory=mandatory)


def select_working_set(
    candidates: list[ScoredCandidate],
    ctx: ScoringContext,
    profile: ProfilePolicy,
    budget: int,
    store: Optional[MemoryStore] = None,
    mandatory_ids: Optional[set[str]] = None,
) -> WorkingSet:
    """Greedy selection under the token budget.

    Mandatory items (policy constraints plus caller-pinned ids) go in first
    and may exceed the budget, flagged with a warning event. Everything else
    competes in pass1_sum order; at each step the cost dimension is scored
    against the remaining budget and the interaction penalties are checked
    against what is already selected. A candidate is included only when it
    fits and its final score stays positive.
    """
    if budget <= 0:
        raise ValueError("budget must be > 0")
    mandatory_ids = mandatory_ids or set()
    w = profile.weights

    selected: list[ScoredCandidate] = []
    used = 0
    mandatory = [c for c in candidates
                 if c.mandatory or c.fact_id in mandatory_ids]
    optional = [c for c in candidates
                if not (c.mandatory or c.fact_id in mandatory_ids)]
    for item in sorted(mandatory, key=lambda c: (-c.pass1_sum,
                                                 c.token_count, c.fact_id)):
        item.mandatory = True
        selected.append(item)
        used += item.token_count
    over_allocated = used > budget
    if over_allocated and store is not None:
        store.ledger.emit("working_set_over_allocated", {
            "budget": budget, "mandatory_tokens": used,
            "mandatory_count": len(selected),
        }, gateway_id=store.gateway_id)

    # Density order (score per token), not raw score order: with a fixed
    # token budget this is what keeps greedy within a constant factor of the
    # exhaustive optimum.
    optional.sort(key=lambda c: (-c.pass1_sum / max(c.token_count, 1),
                                 c.token_count, c.fact_id))
    optional_used = 0
    for item in optional:
        remaining = budget - min(used, budget) - optional_used
        if remaining <= 0 or item.token_count > remaining:
            continue
        red = _redundancy(item, selected, profile.redundancy_threshold)
        con = _contradiction(item, selected, ctx, profile)
        cost = item.token_count / remaining
        # Cost against the remaining budget replaces the pass-1 estimate.
        dims = dict(item.dims)
        old_cost_term = w["cost_penalty"] * dims["cost_penalty"]
        dims["cost_penalty"] = cost
        pass1 = item.pass1_sum - old_cost_term + w["cost_penalty"] * cost
        final = pass1 + w["redundancy_penalty"] * red \
            + w["contradiction_penalty"] * con
        item.dims = dims
        item.dims["redundancy_penalty"] = red
        item.dims["contradiction_penalty"] = con
        item.pass1_sum = pass1
        item.final_score = final
        if final > 0:
            selected.append(item)
            optional_used += item.token_count
    return WorkingSet(items=selected, budget_tokens=budget,
                      used_tokens=used + optional_used,
                      over_allocated=over_allocated)


def _redundancy(item: ScoredCandidate, selected: list[ScoredCandidate],
                threshold: float) -> float:
    if item.candidate.embedding is None:
        return 0.0
    best = 0.0
    for other in selected:
        if other.candidate.embedding is None:
            continue
        best = max(best, cosine_similarity(item.candidate.embedding,
                                           other.candidate.embedding))
    return 1.0 if best >= threshold else 0.0


def _contradiction(item: ScoredCandidate, selected: list[ScoredCandidate],
                   ctx: ScoringContext, profile: ProfilePolicy) -> float:
    worst = 0.0
    for other in selected:
        kind = ctx.conflicts_with(item.fact_id, other.fact_id)
        if kind == "supersession":
            worst = max(worst, SUPERSESSION_PENALTY)
        elif kind == "contradiction":
            worst = max(worst, CONTRADICTION_EDGE_PENALTY)
        elif (item.candidate.embedding is not None
              and other.candidate.embedding is not None
              and item.candidate.fact is not None
              and other.candidate.fact is not None):
            sim = cosine_similarity(item.candidate.embedding,
                                    other.candidate.embedding)
            gap = abs(item.candidate.fact.confidence
                      - other.candidate.fact.confidence)
            if sim >= profile.contradiction_threshold \
                    and gap >= profile.confidence_gap:
                worst = max(worst, SEMANTIC_CONTRADICTION_PENALTY)
    return worst
