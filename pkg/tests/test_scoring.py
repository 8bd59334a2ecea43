import math
import random

import pytest

from cogmem.embeddings import EmbeddingService
from cogmem.evidence import EvidenceEngine
from cogmem.model import FactAssertion, GoalLink, MemoryClass, TypedEdge
from cogmem.profiles import PRESET_NAMES, resolve_policy
from cogmem.retrieval import RetrievedCandidate
from cogmem.scoring import (
    GoalSnapshot,
    ScoredCandidate,
    ScoringContext,
    build_scoring_context,
    score_pass1,
    select_working_set,
)
from cogmem.store import MemoryStore

HOUR_MS = 3_600_000
NOW = 10_000 * HOUR_MS


@pytest.fixture
def embed():
    return EmbeddingService()


@pytest.fixture
def store():
    return MemoryStore(gateway_id="gw-sc")


def make_candidate(embed, text, *, age_hours=0.0, token_count=None, **fact_kw):
    ts = NOW - int(age_hours * HOUR_MS)
    fact_kw.setdefault("ingest_ts", ts)
    fact_kw.setdefault("update_ts", ts)
    fact = FactAssertion(text=text, gateway_id="gw-sc", **fact_kw)
    if token_count is not None:
        fact = fact.model_copy(update={"token_count": token_count})
    return RetrievedCandidate(
        fact_id=fact.id, text=text, raw_score=0.5, weighted_score=0.5,
        source_set={"semantic"}, embedding=embed.embed_one(text),
        token_count=fact.token_count, fact=fact)


def ctx_at(now=NOW, **kw):
    return ScoringContext(now_ts=now, **kw)


class TestPass1Dimensions:
    def test_recency_boundaries_all_presets(self, embed):
        for preset in PRESET_NAMES:
            profile = resolve_policy(preset)
            for multiple, expected in ((0.0, 1.0), (1.0, 0.5), (2.0, 0.25)):
                cand = make_candidate(
                    embed, "timed fact",
                    age_hours=multiple * profile.half_life_hours)
                scored = score_pass1(cand, ctx_at(), profile)
                assert scored.dims["recency"] == pytest.approx(expected), \
                    f"{preset} at {multiple}x half-life"

    def test_coding_24h_recency_is_half(self, embed):
        cand = make_candidate(embed, "one day old", age_hours=24)
        scored = score_pass1(cand, ctx_at(), resolve_policy("coding"))
        assert scored.dims["recency"] == pytest.approx(0.5)

    def test_research_three_refs_strength(self, embed):
        cand = make_candidate(embed, "well supported")
        ctx = ctx_at(evidence_counts={cand.fact_id: 3})
        scored = score_pass1(cand, ctx, resolve_policy("research"))
        assert scored.dims["evidence_strength"] == pytest.approx(0.6)

    def test_strength_capped_at_one(self, embed):
        cand = make_candidate(embed, "over supported")
        ctx = ctx_at(evidence_counts={cand.fact_id: 99})
        scored = score_pass1(cand, ctx, resolve_policy("coding"))
        assert scored.dims["evidence_strength"] == 1.0

    def test_compacted_id_kills_novelty(self, embed):
        cand = make_candidate(embed, "already compacted")
        profile = resolve_policy("coding")
        fresh = score_pass1(cand, ctx_at(), profile)
        stale = score_pass1(cand, ctx_at(compacted_ids={cand.fact_id}), profile)
        assert fresh.dims["novelty"] == 1.0
        assert stale.dims["novelty"] == 0.0

    def test_neutral_use_prior(self, embed):
        cand = make_candidate(embed, "never used")
        scored = score_pass1(cand, ctx_at(), resolve_policy("coding"))
        assert scored.dims["successful_use"] == 0.5

    def test_use_ratio(self, embed):
        cand = make_candidate(embed, "used fact",
                              use_count=4, successful_use_count=3)
        scored = score_pass1(cand, ctx_at(), resolve_policy("coding"))
        assert scored.dims["successful_use"] == pytest.approx(0.75)

    def test_confidence_times_multiplier(self, embed):
        cand = make_candidate(embed, "claimed fact", confidence=0.6)
        ctx = ctx_at(verification_multipliers={cand.fact_id: 0.9})
        scored = score_pass1(cand, ctx, resolve_policy("coding"))
        assert scored.dims["confidence"] == pytest.approx(0.54)

    def test_no_claims_default_multiplier(self, embed):
        cand = make_candidate(embed, "unclaimed fact", confidence=1.0)
        scored = score_pass1(cand, ctx_at(), resolve_policy("coding"))
        assert scored.dims["confidence"] == pytest.approx(0.8)

    def test_turn_relevance_is_cosine(self, embed):
        cand = make_candidate(embed, "database migration steps")
        ctx = ctx_at(turn_embedding=embed.embed_one("database migration steps"))
        scored = score_pass1(cand, ctx, resolve_policy("coding"))
        assert scored.dims["turn_relevance"] == pytest.approx(1.0)

    def test_missing_embedding_scores_zero_relevance(self, embed):
        cand = make_candidate(embed, "no vector")
        cand.embedding = None
        ctx = ctx_at(turn_embedding=embed.embed_one("anything"),
                     session_goals=[GoalSnapshot("g1", "goal",
                                                 embed.embed_one("goal"))])
        scored = score_pass1(cand, ctx, resolve_policy("coding"))
        assert scored.dims["turn_relevance"] == 0.0
        assert scored.dims["session_goal_relevance"] == 0.0

    def test_cost_against_budget(self, embed):
        cand = make_candidate(embed, "costly", token_count=800)
        profile = resolve_policy("coding")  # budget 8000
        scored = score_pass1(cand, ctx_at(), profile)
        assert scored.dims["cost_penalty"] == pytest.approx(0.1)

    def test_pass1_sum_is_weighted_sum(self, embed):
        cand = make_candidate(embed, "sum check", token_count=400)
        profile = resolve_policy("worker")
        scored = score_pass1(cand, ctx_at(), profile)
        expected = sum(profile.weights[d] * v for d, v in scored.dims.items())
        assert scored.pass1_sum == pytest.approx(expected)

    def test_policy_facts_are_mandatory(self, embed):
        cand = make_candidate(embed, "never push to main", category="constraint",
                              memory_class=MemoryClass.POLICY)
        assert score_pass1(cand, ctx_at(), resolve_policy("coding")).mandatory

    def test_dimension_independence(self, embed):
        profile = resolve_policy("coding")
        base = make_candidate(embed, "independent fact", age_hours=5,
                              use_count=2, successful_use_count=1)
        before = score_pass1(base, ctx_at(), profile).dims
        perturbed = make_candidate(embed, "independent fact", age_hours=50,
                                   use_count=2, successful_use_count=1)
        after = score_pass1(perturbed, ctx_at(), profile).dims
        changed = {d for d in before if before[d] != after[d]}
        assert changed == {"recency"}


class TestGoalRelevance:
    def test_direct_tag_full_score(self, embed):
        goal = GoalSnapshot("g1", "ship the feature")
        cand = make_candidate(embed, "unrelated text",
                              goal_links=(GoalLink(goal_id="g1",
                                                   strength="direct"),))
        ctx = ctx_at(session_goals=[goal])
        assert score_pass1(cand, ctx, resolve_policy("coding")) \
            .dims["session_goal_relevance"] == 1.0

    def test_indirect_tag(self, embed):
        goal = GoalSnapshot("g1", "ship the feature")
        cand = make_candidate(embed, "unrelated text",
                              goal_links=(GoalLink(goal_id="g1",
                                                   strength="indirect"),))
        ctx = ctx_at(session_goals=[goal])
        assert score_pass1(cand, ctx, resolve_policy("coding")) \
            .dims["session_goal_relevance"] == pytest.approx(0.7)

    def test_parent_chain_bonus(self, embed):
        parent = GoalSnapshot("parent", "release the product")
        child = GoalSnapshot("child", "fix the login bug", parent_id="parent")
        cand = make_candidate(embed, "zz qq xx",
                              goal_links=(GoalLink(goal_id="child",
                                                   strength="direct"),))
        ctx = ctx_at(session_goals=[parent, child])
        rel = score_pass1(cand, ctx, resolve_policy("coding")) \
            .dims["session_goal_relevance"]
        assert rel == 1.0  # the child tag itself dominates
        # with only the parent visible, the walked-up bonus applies
        grand = GoalSnapshot("grand", "company okr", parent_id=None)
        parent2 = GoalSnapshot("parent", "release", parent_id="grand")
        child2 = GoalSnapshot("child", "fix bug", parent_id="parent")
        cand2 = make_candidate(embed, "zz qq xx",
                               goal_links=(GoalLink(goal_id="child",
                                                    strength="indirect"),))
        ctx2 = ctx_at(session_goals=[grand, parent2, child2])
        rel2 = score_pass1(cand2, ctx2, resolve_policy("coding")) \
            .dims["session_goal_relevance"]
        assert rel2 == pytest.approx(0.7)  # indirect tag beats 0.7*0.7 walk-up

    def test_semantic_fallback(self, embed):
        goal = GoalSnapshot("g1", "migrate the billing database",
                            embedding=embed.embed_one(
                                "migrate the billing database"))
        cand = make_candidate(embed, "migrate the billing database")
        ctx = ctx_at(session_goals=[goal])
        rel = score_pass1(cand, ctx, resolve_policy("coding")) \
            .dims["session_goal_relevance"]
        assert rel == pytest.approx(1.0)


class TestBuildContext:
    def test_empty_store(self, store, embed):
        evidence = EvidenceEngine(store)
        ctx = build_scoring_context(store, evidence, embed, "hello there")
        assert ctx.session_goals == [] and ctx.persistent_goals == []
        assert ctx.turn_embedding is not None
        assert ctx.evidence_counts == {}

    def test_single_batch_embedding_call(self, store, embed):
        evidence = EvidenceEngine(store)
        goals = [{"id": f"g{i}", "title": f"goal number {i}"} for i in range(3)]
        before_calls = embed.backend_calls
        ctx = build_scoring_context(store, evidence, embed, "the turn text",
                                    session_goals=goals)
        assert embed.backend_calls == before_calls + 1
        assert embed.backend_texts == 4
        assert all(g.embedding is not None for g in ctx.session_goals)

    def test_conflict_pairs_normalized_both_ways(self, store, embed):
        a = FactAssertion(text="price is 10", gateway_id="gw-sc")
        b = FactAssertion(text="price is 20", gateway_id="gw-sc")
        store.store_fact(a, embed.embed_one(a.text), 0.999)
        store.store_fact(b, embed.embed_one(b.text), 0.999)
        store.graph.add_edge(TypedEdge(edge_type="supersession",
                                       from_id=a.id, to_id=b.id))
        ctx = build_scoring_context(store, EvidenceEngine(store), embed, "q")
        assert ctx.conflicts_with(a.id, b.id) == "supersession"
        assert ctx.conflicts_with(b.id, a.id) == "supersession"
        assert ctx.conflicts_with(a.id, "other") is None

    def test_subquery_failure_degrades(self, store, embed, monkeypatch):
        evidence = EvidenceEngine(store)
        monkeypatch.setattr(evidence, "evidence_count",
                            lambda fid: (_ for _ in ()).throw(RuntimeError()))
        fact = FactAssertion(text="present", gateway_id="gw-sc")
        store.store_fact(fact, embed.embed_one(fact.text))
        ctx = build_scoring_context(store, evidence, embed, "q")
        assert "evidence_counts" in ctx.degraded
        assert ctx.evidence_counts == {}
        assert store.ledger.query(event_type="degraded_operation")


class TestSelection:
    def test_mandatory_over_budget_flags(self, store, embed):
        profile = resolve_policy("coding")
        cand = make_candidate(embed, "constraint " * 20, token_count=9000,
                              category="constraint",
                              memory_class=MemoryClass.POLICY)
        scored = score_pass1(cand, ctx_at(), profile)
        ws = select_working_set([scored], ctx_at(), profile, 8000, store=store)
        assert ws.over_allocated
        assert [i.fact_id for i in ws.items] == [cand.fact_id]
        assert store.ledger.query(event_type="working_set_over_allocated")

    def test_identical_pair_drops_exactly_point_eight(self, embed):
        profile = resolve_policy("coding")  # redundancy weight -0.8
        first = make_candidate(embed, "duplicate content here", confidence=0.9)
        second = make_candidate(embed, "duplicate content here", confidence=0.9)
        ctx = ctx_at(turn_embedding=embed.embed_one("duplicate content"))
        scored = [score_pass1(c, ctx, profile) for c in (first, second)]
        ws = select_working_set(scored, ctx, profile, 8000)
        # which twin is picked first depends on id tiebreak; exactly one
        # of the pair must carry the full penalty
        pool = {i.fact_id: i for i in ws.items}
        pool.update({s.fact_id: s for s in scored if s.fact_id not in pool})
        penalized = [s for s in pool.values()
                     if s.dims["redundancy_penalty"] == 1.0]
        assert len(penalized) == 1
        loser = penalized[0]
        assert loser.final_score == pytest.approx(loser.pass1_sum - 0.8)

    def test_budget_invariant_random(self, embed):
        profile = resolve_policy("coding")
        rng = random.Random(7)
        for _ in range(10):
            cands = [make_candidate(embed, f"item {i} {rng.random()}",
                                    token_count=rng.randint(100, 3000))
                     for i in range(12)]
            ctx = ctx_at(turn_embedding=embed.embed_one("item"))
            scored = [score_pass1(c, ctx, profile) for c in cands]
            budget = rng.randint(500, 6000)
            ws = select_working_set(scored, ctx, profile, budget)
            optional_tokens = sum(i.token_count for i in ws.items
                                  if not i.mandatory)
            assert optional_tokens <= budget

    def test_contradiction_edge_both_directions(self, embed):
        profile = resolve_policy("coding")
        a = make_candidate(embed, "service uses postgres")
        b = make_candidate(embed, "completely different topic entirely")
        for pair in [(a.fact_id, b.fact_id), (b.fact_id, a.fact_id)]:
            ctx = ctx_at(conflict_pairs={(pair[0], pair[1], "contradiction")},
                         turn_embedding=embed.embed_one("service uses postgres"))
            scored_a = score_pass1(a, ctx, profile)
            scored_b = score_pass1(b, ctx, profile)
            ws = select_working_set([scored_a, scored_b], ctx, profile, 8000)
            later = next(i for i in ws.items + [scored_a, scored_b]
                         if i.fact_id == (scored_b if scored_a.pass1_sum
                                          >= scored_b.pass1_sum
                                          else scored_a).fact_id)
            assert later.dims.get("contradiction_penalty") == pytest.approx(0.9)

    def test_supersession_outranks_contradiction(self, embed):
        profile = resolve_policy("coding")
        a = make_candidate(embed, "alpha statement")
        b = make_candidate(embed, "totally unrelated beta")
        ctx = ctx_at(conflict_pairs={
            (a.fact_id, b.fact_id, "contradiction"),
            (a.fact_id, b.fact_id, "supersession")})
        assert ctx.conflicts_with(a.fact_id, b.fact_id) == "supersession"

    def test_semantic_contradiction_layer(self, embed):
        profile = resolve_policy("coding")  # threshold 0.90, gap 0.30
        high = make_candidate(embed, "the api limit is one hundred",
                              confidence=0.95)
        low = make_candidate(embed, "the api limit is one hundred",
                             confidence=0.2)
        ctx = ctx_at(turn_embedding=embed.embed_one("api limit"))
        scored = sorted((score_pass1(c, ctx, profile) for c in (high, low)),
                        key=lambda s: -s.pass1_sum)
        ws = select_working_set(list(scored), ctx, profile, 8000)
        later = scored[1]
        assert later.dims["contradiction_penalty"] == pytest.approx(0.7)

    def test_greedy_matches_exhaustive_on_unit_slots(self, embed):
        profile = resolve_policy("coding")
        rng = random.Random(11)
        cands = []
        for i in range(10):
            c = make_candidate(embed, f"slot item {i} {rng.random()}",
                               token_count=1)
            cands.append(c)
        ctx = ctx_at(turn_embedding=embed.embed_one("slot item"))
        scored = [score_pass1(c, ctx, profile) for c in cands]
        neutral = resolve_policy("coding", org_override={"weights": {
            "redundancy_penalty": 0.0, "contradiction_penalty": 0.0,
            "cost_penalty": 0.0}})
        rescored = [score_pass1(c, ctx, neutral) for c in cands]
        ws = select_working_set([ScoredCandidate(s.candidate, dict(s.dims),
                                                 s.pass1_sum, s.pass1_sum,
                                                 s.mandatory)
                                 for s in rescored], ctx, neutral, 3)
        greedy_value = sum(i.pass1_sum for i in ws.items)
        best = 0.0
        values = {s.fact_id: s.pass1_sum for s in rescored}
        ids = list(values)
        for mask in range(2 ** 10):
            chosen = [ids[i] for i in range(10) if mask >> i & 1]
            if len(chosen) <= 3:
                best = max(best, sum(values[c] for c in chosen))
        assert best > 0
        assert greedy_value / best >= 0.63

    def test_argmax_invariance_under_scaling(self, embed):
        profile = resolve_policy("coding", org_override={"weights": {
            "redundancy_penalty": 0.0, "contradiction_penalty": 0.0,
            "cost_penalty": 0.0}})
        rng = random.Random(3)
        cands = [make_candidate(embed, f"scale item {i} {rng.random()}",
                                token_count=0)
                 for i in range(8)]
        for c in cands:
            c.token_count = 0
        ctx = ctx_at(turn_embedding=embed.embed_one("scale item"))
        base = [score_pass1(c, ctx, profile) for c in cands]
        scaled = [ScoredCandidate(s.candidate, dict(s.dims),
                                  s.pass1_sum * 3.5, s.pass1_sum * 3.5,
                                  s.mandatory) for s in base]
        order1 = [i.fact_id for i in select_working_set(
            [ScoredCandidate(s.candidate, dict(s.dims), s.pass1_sum,
                             s.pass1_sum, s.mandatory) for s in base],
            ctx, profile, 100).items]
        order2 = [i.fact_id for i in select_working_set(
            scaled, ctx, profile, 100).items]
        assert order1 == order2

    def test_positive_final_score_required(self, embed):
        profile = resolve_policy("coding")
        junk = make_candidate(embed, "irrelevant ancient junk",
                              age_hours=10_000, confidence=0.0,
                              token_count=7000)
        scored = score_pass1(junk, ctx_at(), profile)
        scored.pass1_sum = -0.5
        scored.final_score = -0.5
        ws = select_working_set([scored], ctx_at(), profile, 8000)
        assert ws.items == []

    def test_budget_precondition(self, embed):
        with pytest.raises(ValueError):
            select_working_set([], ctx_at(), resolve_policy("coding"), 0)
