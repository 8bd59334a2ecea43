import json

import pytest
from hypothesis import given, strategies as st

from cogmem.model import (
    ACTOR_TYPES,
    BUILTIN_CATEGORIES,
    CATEGORY_CLASS_RULES,
    ActorRef,
    FactAssertion,
    GoalLink,
    MemoryClass,
    Scope,
    TypedEdge,
    actor_id,
    classify_memory_class,
    default_token_count,
    promotion_target,
)
from cogmem.providers import FailingProvider, ScriptedProvider


class TestClassification:
    @pytest.mark.parametrize("category,expected", [
        ("preference", MemoryClass.SEMANTIC),
        ("constraint", MemoryClass.POLICY),
        ("event", MemoryClass.EPISODIC),
        ("identity", MemoryClass.SEMANTIC),
        ("trait", MemoryClass.SEMANTIC),
        ("relationship", MemoryClass.SEMANTIC),
        ("project", MemoryClass.SEMANTIC),
        ("system", MemoryClass.SEMANTIC),
        ("general", MemoryClass.SEMANTIC),
        ("decision", MemoryClass.EPISODIC),
        ("verification", MemoryClass.EPISODIC),
        ("procedure_reference", MemoryClass.POLICY),
    ])
    def test_rule_table(self, category, expected):
        assert classify_memory_class(category) is expected

    def test_rule_table_is_total_over_12_categories(self):
        assert len(BUILTIN_CATEGORIES) == 12
        for category in BUILTIN_CATEGORIES:
            assert CATEGORY_CLASS_RULES[category] in MemoryClass

    def test_builtin_skips_provider(self):
        spy = ScriptedProvider()
        classify_memory_class("preference", spy)
        assert spy.call_count == 0

    def test_custom_invokes_provider_once(self):
        spy = ScriptedProvider(class_map={"deploy_note": "PROCEDURAL"})
        assert classify_memory_class("deploy_note", spy) is MemoryClass.PROCEDURAL
        assert spy.call_count == 1

    def test_provider_failure_defaults_semantic(self):
        assert classify_memory_class("weird", FailingProvider()) is MemoryClass.SEMANTIC

    def test_empty_category_rejected(self):
        with pytest.raises(ValueError):
            classify_memory_class("")


class TestScopes:
    @pytest.mark.parametrize("scope,target", [
        (Scope.SESSION, Scope.ACTOR),
        (Scope.GLOBAL, None),
        (Scope.ARTIFACT, Scope.ACTOR),
        (Scope.TASK, Scope.SESSION),
        (Scope.SUBAGENT, Scope.SESSION),
        (Scope.ACTOR, Scope.TEAM),
        (Scope.TEAM, Scope.ORGANIZATION),
        (Scope.ORGANIZATION, Scope.GLOBAL),
    ])
    def test_promotion_targets(self, scope, target):
        assert promotion_target(scope) is target

    @pytest.mark.parametrize("scope", list(Scope))
    def test_chains_terminate_within_five_steps(self, scope):
        current = scope
        for _ in range(5):
            nxt = promotion_target(current)
            if nxt is None:
                break
            current = nxt
        assert promotion_target(current) is None or current is Scope.GLOBAL


class TestFactAssertion:
    def test_roundtrip(self):
        fact = FactAssertion(
            text="Alice manages the Berlin office",
            category="relationship",
            memory_class=MemoryClass.SEMANTIC,
            confidence=0.8,
            source_actor="a1",
            about_actors=("a2",),
            goal_links=(GoalLink(goal_id="g1", strength="direct"),),
            session_key="s1",
            gateway_id="gw",
        )
        encoded = fact.model_dump_json()
        decoded = FactAssertion.model_validate(json.loads(encoded))
        assert decoded == fact

    def test_timestamps_are_integers_in_json(self):
        doc = json.loads(FactAssertion(text="x").model_dump_json())
        for field in ("event_ts", "ingest_ts", "update_ts", "last_used_ts"):
            assert isinstance(doc[field], int)

    def test_confidence_bounds(self):
        with pytest.raises(ValueError):
            FactAssertion(text="x", confidence=1.5)

    def test_successful_uses_bounded_by_uses(self):
        with pytest.raises(ValueError):
            FactAssertion(text="x", use_count=1, successful_use_count=2)

    def test_builtin_category_enforces_class(self):
        with pytest.raises(ValueError):
            FactAssertion(text="x", category="constraint",
                          memory_class=MemoryClass.EPISODIC)

    def test_custom_category_free_class(self):
        fact = FactAssertion(text="x", category="lab_note",
                             memory_class=MemoryClass.EPISODIC)
        assert fact.category == "lab_note"

    def test_token_count_default(self):
        fact = FactAssertion(text="one two three")
        assert fact.token_count == default_token_count("one two three") == 4


class TestActorsAndEdges:
    def test_actor_id_deterministic(self):
        assert actor_id("gw", "agent:main") == actor_id("gw", "agent:main")
        assert actor_id("gw", "agent:main") != actor_id("gw2", "agent:main")

    def test_twelve_actor_types(self):
        assert len(ACTOR_TYPES) == 12

    def test_actor_roundtrip(self):
        actor = ActorRef(id=actor_id("gw", "u1"), actor_type="human_operator",
                         display_name="Alice", trust_level=0.9,
                         authority_level=75,
                         platform_handles=("email:alice@acme.test",))
        assert ActorRef.model_validate(actor.model_dump()) == actor

    def test_edge_roundtrip_and_liveness(self):
        edge = TypedEdge(edge_type="supersession", from_id="f1", to_id="f2",
                         valid_from=100, valid_until=200)
        assert TypedEdge.model_validate(edge.model_dump()) == edge
        assert edge.live_at(100) and edge.live_at(199)
        assert not edge.live_at(200) and not edge.live_at(99)

    def test_unknown_edge_type_rejected(self):
        with pytest.raises(ValueError):
            TypedEdge(edge_type="likes", from_id="a", to_id="b")


@given(st.text(min_size=1, max_size=200), st.floats(min_value=0, max_value=1))
def test_fact_roundtrip_property(text, confidence):
    fact = FactAssertion(text=text, confidence=confidence)
    assert FactAssertion.model_validate(fact.model_dump(mode="json")) == fact
