import pytest

from cogmem.embeddings import EmbeddingService
from cogmem.goals import GoalHint, GoalManager
from cogmem.providers import FailingProvider, ScriptedProvider
from cogmem.store import MemoryStore


@pytest.fixture
def store():
    return MemoryStore(gateway_id="gw-g")


@pytest.fixture
def clock():
    state = {"now": 1_000_000}
    def tick():
        return state["now"]
    tick.state = state
    return tick


@pytest.fixture
def manager(store, clock):
    return GoalManager(store, embeddings=EmbeddingService(),
                       provider=ScriptedProvider(), clock=clock)


class TestTier1Hints:
    def test_completed_no_provider_call(self, store, clock):
        spy = ScriptedProvider()
        mgr = GoalManager(store, provider=spy, clock=clock)
        goal = mgr.create_session_goal("s1", "ship the release")
        updated = mgr.apply_hint(GoalHint(goal_id=goal.id, kind="completed"), "s1")
        assert updated.status == "COMPLETED"
        assert updated.confidence == 1.0
        assert spy.call_count == 0

    def test_all_tier1_kinds_zero_calls(self, store, clock):
        spy = ScriptedProvider()
        mgr = GoalManager(store, provider=spy, clock=clock)
        for kind in ("progressed", "blocked", "abandoned", "completed"):
            goal = mgr.create_session_goal("s1", f"goal for {kind}")
            mgr.apply_hint(GoalHint(goal_id=goal.id, kind=kind, payload="p"), "s1")
        assert spy.call_count == 0

    def test_blocked_appends_blocker(self, manager):
        goal = manager.create_session_goal("s1", "get credentials")
        updated = manager.apply_hint(
            GoalHint(goal_id=goal.id, kind="blocked",
                     payload="awaiting creds"), "s1")
        assert updated.status == "BLOCKED"
        assert updated.blockers == ("awaiting creds",)

    def test_progress_unblocks(self, manager):
        goal = manager.create_session_goal("s1", "deploy")
        manager.apply_hint(GoalHint(goal_id=goal.id, kind="blocked",
                                    payload="waiting"), "s1")
        updated = manager.apply_hint(
            GoalHint(goal_id=goal.id, kind="progressed",
                     payload="creds arrived"), "s1")
        assert updated.status == "ACTIVE"
        assert updated.blockers == ()
        assert "creds arrived" in updated.progress_notes

    def test_unknown_goal_dropped_with_trace(self, manager, store):
        out = manager.apply_hint(GoalHint(goal_id="ghost", kind="completed"), "s1")
        assert out is None
        events = store.ledger.query(event_type="goal_audit")
        assert any(e.payload.get("dropped") == "unknown goal" for e in events)

    def test_unknown_kind_rejected(self, manager):
        goal = manager.create_session_goal("s1", "x")
        with pytest.raises(ValueError):
            manager.apply_hint(GoalHint(goal_id=goal.id, kind="paused"), "s1")

    def test_audit_event_per_hint(self, manager, store):
        goal = manager.create_session_goal("s1", "audited goal")
        manager.apply_hint(GoalHint(goal_id=goal.id, kind="completed"), "s1")
        events = store.ledger.query(event_type="goal_audit", session_key="s1")
        assert any(e.payload.get("prior_status") == "ACTIVE"
                   and e.payload.get("new_status") == "COMPLETED"
                   for e in events)


class TestTier2Hints:
    def test_refined_calls_provider(self, store, clock):
        spy = ScriptedProvider()
        mgr = GoalManager(store, provider=spy, clock=clock)
        goal = mgr.create_session_goal("s1", "improve onboarding")
        mgr.apply_hint(GoalHint(goal_id=goal.id, kind="refined",
                                payload="focus on mobile"), "s1")
        mgr.drain()
        assert spy.call_count == 1
        assert "focus on mobile" in mgr.get_goal("s1", goal.id).progress_notes

    def test_refined_survives_provider_failure(self, store, clock):
        mgr = GoalManager(store, provider=FailingProvider(), clock=clock)
        goal = mgr.create_session_goal("s1", "resilient goal",
                                       description="original")
        mgr.apply_hint(GoalHint(goal_id=goal.id, kind="refined",
                                payload="new info"), "s1")
        mgr.drain()
        assert mgr.get_goal("s1", goal.id).description == "original"

    def test_new_subgoal_created(self, manager):
        parent = manager.create_session_goal("s1", "launch product")
        manager.apply_hint(GoalHint(goal_id=parent.id, kind="new_subgoal",
                                    payload="write announcement post"), "s1")
        manager.drain()
        subs = [g for g in manager.session_goals("s1")
                if g.parent_id == parent.id]
        assert len(subs) == 1
        assert subs[0].title == "write announcement post"

    def test_sibling_duplicate_dropped(self, manager, store):
        parent = manager.create_session_goal("s1", "launch product")
        for _ in range(2):
            manager.apply_hint(GoalHint(goal_id=parent.id, kind="new_subgoal",
                                        payload="write the blog post"), "s1")
            manager.drain()
        subs = [g for g in manager.session_goals("s1")
                if g.parent_id == parent.id]
        assert len(subs) == 1
        events = store.ledger.query(event_type="goal_audit")
        assert any(e.payload.get("dropped") == "sibling title duplicate"
                   for e in events)

    def test_dissimilar_sibling_allowed(self, manager):
        parent = manager.create_session_goal("s1", "launch product")
        for title in ("write announcement blog post",
                      "configure billing webhooks"):
            manager.apply_hint(GoalHint(goal_id=parent.id, kind="new_subgoal",
                                        payload=title), "s1")
            manager.drain()
        subs = [g for g in manager.session_goals("s1")
                if g.parent_id == parent.id]
        assert len(subs) == 2

    def test_subgoal_cap(self, store, clock):
        mgr = GoalManager(store, provider=ScriptedProvider(), clock=clock,
                          subgoal_cap=3)
        parent = mgr.create_session_goal("s1", "big goal")
        for i in range(5):
            mgr.apply_hint(GoalHint(goal_id=parent.id, kind="new_subgoal",
                                    payload=f"distinct subtask {i} "
                                            f"{'abcde'[i] * 3}"), "s1")
            mgr.drain()
        subs = [g for g in mgr.session_goals("s1") if g.parent_id == parent.id]
        assert len(subs) == 3
        events = store.ledger.query(event_type="goal_audit")
        assert any(e.payload.get("dropped") == "session subgoal cap"
                   for e in events)


class TestPropagation:
    def complete(self, mgr, goal):
        mgr.apply_hint(GoalHint(goal_id=goal.id, kind="completed"), "s1")

    @pytest.mark.parametrize("done,total,expected", [
        (2, 4, 0.5), (4, 4, 1.0), (0, 3, 0.0)])
    def test_ratio(self, manager, done, total, expected):
        parent = manager.create_session_goal("s1", "parent goal")
        children = [manager.create_session_goal("s1", f"child {i}",
                                                parent_id=parent.id)
                    for i in range(total)]
        for child in children[:done]:
            self.complete(manager, child)
        if done == 0:
            manager.propagate_completion(children[0].id, "s1")
        assert manager.get_goal("s1", parent.id).confidence \
            == pytest.approx(expected)

    def test_orphan_noop(self, manager):
        lone = manager.create_session_goal("s1", "standalone")
        assert manager.propagate_completion(lone.id, "s1") is None

    def test_cycle_rejected(self, manager):
        a = manager.create_session_goal("s1", "a")
        with pytest.raises(ValueError):
            manager.create_session_goal("s1", "self parent", parent_id="x",
                                        id="x")


class TestVisibility:
    def test_ownerless_global_visible_to_all(self, manager):
        manager.create_persistent_goal("company mission", scope="GLOBAL")
        assert len(manager.query_visible_goals(actor="anyone")) == 1

    def test_owned_actor_goal_hidden_from_others(self, manager):
        manager.create_persistent_goal("my private goal", scope="ACTOR",
                                       owner_actor="actor-a")
        assert manager.query_visible_goals(actor="actor-a")
        assert manager.query_visible_goals(actor="actor-b") == []

    def test_team_membership_matrix(self, manager):
        manager.create_persistent_goal("team goal", scope="TEAM", team_id="t1")
        assert manager.query_visible_goals(team="t1")
        assert manager.query_visible_goals(team="t2") == []
        manager2_hits = manager.query_visible_goals(team=None)
        assert manager2_hits == []

    def test_org_scope(self, manager):
        manager.create_persistent_goal("org goal", scope="ORGANIZATION",
                                       org_id="o1")
        assert manager.query_visible_goals(org="o1")
        assert manager.query_visible_goals(org="o2") == []

    def test_scope_filter(self, manager):
        manager.create_persistent_goal("g1", scope="GLOBAL")
        manager.create_persistent_goal("g2", scope="TEAM", team_id="t1")
        out = manager.query_visible_goals(team="t1", scope_filter="TEAM")
        assert [g.title for g in out] == ["g2"]


class TestTtlAndFlush:
    def test_expired_goal_leaves_candidates_not_audit(self, manager, store,
                                                      clock):
        goal = manager.create_session_goal("s1", "short lived")
        manager.apply_hint(GoalHint(goal_id=goal.id, kind="progressed",
                                    payload="step one"), "s1")
        clock.state["now"] += manager.ttl_ms + 1
        assert manager.candidate_goals("s1") == []
        assert store.ledger.query(event_type="goal_audit", session_key="s1")

    def test_blocked_goals_stay_candidates(self, manager):
        goal = manager.create_session_goal("s1", "blocked but visible")
        manager.apply_hint(GoalHint(goal_id=goal.id, kind="blocked",
                                    payload="review pending"), "s1")
        assert [g.id for g in manager.candidate_goals("s1")] == [goal.id]

    def test_flush_persists_with_annotations(self, manager, store):
        store.graph.put_node("owner-1", "Actor", {})
        parent = manager.create_session_goal("s1", "parent",
                                             owner_actor="owner-1")
        child = manager.create_session_goal("s1", "child",
                                            parent_id=parent.id)
        manager.apply_hint(GoalHint(goal_id=child.id, kind="blocked",
                                    payload="needs approval"), "s1")
        report = manager.flush_session_goals("s1")
        assert set(report.flushed) == {parent.id, child.id}
        _, props = store.graph.get_node(child.id)
        assert props["status"] == "BLOCKED"
        assert props["blockers"] == ["needs approval"]
        assert store.graph.edges_from(parent.id, "parent_child")
        assert store.graph.edges_from("owner-1", "goal_ownership")
        flush_events = store.ledger.query(event_type="goal_flushed")
        assert len(flush_events) == 2

    def test_double_flush_idempotent(self, manager, store):
        manager.create_session_goal("s1", "only goal")
        manager.flush_session_goals("s1")
        nodes_before = len(store.graph.nodes_by_label("Goal"))
        edges_before = sum(len(store.graph.incident_edges(n))
                           for n in store.graph.nodes_by_label("Goal"))
        manager.flush_session_goals("s1")
        assert len(store.graph.nodes_by_label("Goal")) == nodes_before
        assert sum(len(store.graph.incident_edges(n))
                   for n in store.graph.nodes_by_label("Goal")) == edges_before

    def test_flush_failure_partial_report(self, manager, store, monkeypatch):
        g1 = manager.create_session_goal("s1", "good goal")
        g2 = manager.create_session_goal("s1", "bad goal")
        original = manager._persist

        def flaky(goal):
            if goal.id == g2.id:
                raise RuntimeError("store down")
            original(goal)

        monkeypatch.setattr(manager, "_persist", flaky)
        report = manager.flush_session_goals("s1")
        assert g1.id in report.flushed
        assert g2.id in report.failed
