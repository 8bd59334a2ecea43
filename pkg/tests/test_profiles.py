import pytest

from cogmem.model import ActorRef
from cogmem.profiles import (
    AUTONOMY_DOMAINS,
    PRESET_NAMES,
    AuthorityRule,
    RuleStore,
    UnknownPresetError,
    auto_recall_policy,
    check_authority,
    resolve_policy,
)

# Expected preset table, row-major: each tuple is the value for
# (coding, research, managerial, worker, personal_assistant).
EXPECTED_ROWS = {
    ("weights", "turn_relevance"): (1.5, 0.8, 0.7, 1.3, 1.0),
    ("weights", "session_goal_relevance"): (1.2, 1.0, 1.5, 1.4, 0.8),
    ("weights", "global_goal_relevance"): (0.3, 0.8, 1.0, 0.3, 0.4),
    ("weights", "recency"): (1.2, 0.5, 0.6, 1.3, 0.9),
    ("weights", "successful_use"): (0.8, 0.6, 0.5, 0.7, 0.9),
    ("weights", "confidence"): (0.3, 0.8, 0.5, 0.4, 0.3),
    ("weights", "evidence_strength"): (0.2, 0.9, 0.7, 0.3, 0.2),
    ("weights", "novelty"): (0.6, 0.7, 0.4, 0.5, 0.5),
    ("weights", "redundancy_penalty"): (-0.8, -0.5, -0.9, -0.7, -0.6),
    ("weights", "contradiction_penalty"): (-1.0, -1.0, -1.0, -1.0, -1.0),
    ("weights", "cost_penalty"): (-0.4, -0.2, -0.5, -0.4, -0.3),
    ("half_life_hours",): (24, 168, 72, 12, 720),
    ("evidence_refs_max",): (2, 5, 3, 2, 3),
    ("redundancy_threshold",): (0.85, 0.80, 0.90, 0.85, 0.85),
    ("contradiction_threshold",): (0.90, 0.85, 0.90, 0.90, 0.90),
    ("confidence_gap",): (0.30, 0.25, 0.30, 0.30, 0.35),
    ("budget_tokens",): (8000, 12000, 8000, 8000, 8000),
    ("isolation_level",): ("LOOSE", "NONE", "LOOSE", "LOOSE", "STRICT"),
    ("retrieval", "graph_mode"): ("LOCAL", "GLOBAL", "HYBRID", "LOCAL", "HYBRID"),
    ("retrieval", "graph_depth"): (1, 3, 2, 1, 2),
}


class TestPresetFidelity:
    @pytest.mark.parametrize("path", sorted(EXPECTED_ROWS, key=str))
    def test_cell_values(self, path):
        expected = EXPECTED_ROWS[path]
        for preset, want in zip(PRESET_NAMES, expected):
            policy = resolve_policy(preset)
            got = policy
            for part in path:
                got = got[part] if isinstance(got, dict) else getattr(got, part)
            assert got == pytest.approx(want), f"{preset}.{'.'.join(path)}"

    def test_isolation_scopes(self):
        assert resolve_policy("research").isolation_scope == "GLOBAL"
        for name in ("coding", "managerial", "worker", "personal_assistant"):
            assert resolve_policy(name).isolation_scope == "SESSION_KEY"

    def test_autonomy_matrix_complete_and_pinned(self):
        coding = resolve_policy("coding").autonomy_matrix
        assert set(coding) == set(AUTONOMY_DOMAINS)
        assert coding["FINANCIAL"] == "HARD_STOP"
        assert coding["CODE_CHANGE"] == "APPROVE_FIRST"
        assert coding["DATA_ACCESS"] == "AUTONOMOUS"
        assert resolve_policy("managerial").autonomy_matrix["CODE_CHANGE"] == "HARD_STOP"

    def test_unknown_preset_names_the_alternatives(self):
        with pytest.raises(UnknownPresetError) as exc:
            resolve_policy("gaming")
        for name in PRESET_NAMES:
            assert name in str(exc.value)


class TestResolution:
    def test_org_override_replaces_field_wise(self):
        policy = resolve_policy("coding", org_override={
            "weights": {"evidence_strength": 0.8},
            "budget_tokens": 16000,
        })
        assert policy.weights["evidence_strength"] == 0.8
        assert policy.budget_tokens == 16000
        # untouched fields keep preset values
        assert policy.weights["turn_relevance"] == 1.5
        assert policy.half_life_hours == 24

    def test_tuning_delta_applies_after_override(self):
        policy = resolve_policy(
            "coding",
            org_override={"weights": {"turn_relevance": 2.0}},
            tuning_delta={"turn_relevance": 0.05},
        )
        assert policy.weights["turn_relevance"] == pytest.approx(2.1)

    def test_tuning_delta_is_fractional(self):
        policy = resolve_policy("coding", tuning_delta={"turn_relevance": 0.05})
        assert policy.weights["turn_relevance"] == pytest.approx(1.575)

    def test_resolved_policy_is_immutable(self):
        policy = resolve_policy("worker")
        with pytest.raises(Exception):
            policy.budget_tokens = 99

    def test_auto_recall_floor(self):
        policy = auto_recall_policy(resolve_policy("coding").retrieval)
        assert policy.min_similarity == 0.3
        assert policy.max_candidates == 10


def actor(level, org=None, team=None, active=True):
    return ActorRef(id="a", actor_type="human_operator", authority_level=level,
                    org_id=org, team_id=team, active=active)


class TestAuthority:
    def test_anyone_creates_actor_goal(self):
        assert check_authority(actor(0), "create_goal_actor").allowed

    def test_org_goal_needs_70_and_membership(self):
        assert check_authority(actor(72, org="o1"), "create_goal_org",
                               target_org="o1").allowed
        assert not check_authority(actor(72, org="o1"), "create_goal_org",
                                   target_org="o2").allowed
        assert not check_authority(actor(60, org="o1"), "create_goal_org",
                                   target_org="o1").allowed

    def test_team_goal_exemption_ladder(self):
        lead = actor(50, team="t1")
        assert check_authority(lead, "create_goal_team", target_team="t1").allowed
        assert not check_authority(lead, "create_goal_team", target_team="t2").allowed
        admin = actor(70, team="t1")
        assert check_authority(admin, "create_goal_team", target_team="t2").allowed

    def test_register_actor_denied_below_70(self):
        decision = check_authority(actor(40, org="o1"), "register_actor",
                                   target_org="o1")
        assert not decision.allowed
        assert "40" in decision.reason and "70" in decision.reason

    def test_global_goal_needs_90(self):
        assert check_authority(actor(90), "create_goal_global").allowed
        assert not check_authority(actor(89), "create_goal_global").allowed

    def test_deactivated_actor_denied(self):
        assert not check_authority(actor(95, active=False), "create_goal_global").allowed

    def test_unknown_action_denied(self):
        decision = check_authority(actor(99), "launch_rockets")
        assert not decision.allowed and decision.rule_id is None

    def test_exemption_bypasses_membership_not_minimum(self):
        # level 90 bypasses the org match for org goals
        assert check_authority(actor(90, org="o1"), "create_goal_org",
                               target_org="elsewhere").allowed


class TestRuleStore:
    def test_seeds_defaults(self):
        rules = RuleStore().rules()
        assert rules["create_goal_org"].min_level == 70
        assert len(rules) == 11

    def test_edits_bump_generation(self):
        rs = RuleStore()
        start = rs.generation
        rs.put_rule(AuthorityRule(id="create_goal_org", action="create_goal_org",
                                  min_level=60, requires_org_match=True,
                                  matching_exempt_level=90))
        assert rs.generation == start + 1
        assert rs.rules()["create_goal_org"].min_level == 60

    def test_edited_rules_flow_into_checks(self):
        rs = RuleStore()
        rs.put_rule(AuthorityRule(id="create_goal_global", action="create_goal_global",
                                  min_level=80))
        assert check_authority(actor(85), "create_goal_global",
                               rules=rs.rules()).allowed

    def test_override_round_trip(self):
        rs = RuleStore()
        rs.set_override("org-1", "coding", {"budget_tokens": 10000})
        assert rs.get_override("org-1", "coding") == {"budget_tokens": 10000}
        assert rs.get_override("org-2", "coding") is None
        assert rs.get_override(None, "coding") is None

    def test_tuning_delta_round_trip(self):
        rs = RuleStore()
        rs.set_tuning_delta("coding", "org-1", "gw-1", {"recency": -0.02}, 123)
        assert rs.get_tuning_delta("coding", "org-1", "gw-1") == {"recency": -0.02}
        assert rs.get_tuning_delta("coding", "org-1", "gw-2") is None

    def test_persists_across_reopen(self, tmp_path):
        path = str(tmp_path / "rules.db")
        RuleStore(path).set_override("org-1", "worker", {"budget_tokens": 4000})
        assert RuleStore(path).get_override("org-1", "worker") == {
            "budget_tokens": 4000}
