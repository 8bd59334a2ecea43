"""Profile presets, the four-level policy inheritance chain, deployment-tier
module gating data, and the numeric authority model.

Presets and authority rules ship as versioned JSON config; runtime edits go
through an embedded SQLite rule store so they survive restarts and can be
scoped per deployment.
"""

from __future__ import annotations

import json
import sqlite3
import threading
from importlib import resources
from typing import NamedTuple, Optional

from pydantic import BaseModel, Field

from .model import ActorRef

PRESET_NAMES = ("coding", "research", "managerial", "worker", "personal_assistant")

AUTONOMY_DOMAINS = (
    "FINANCIAL",
    "DATA_ACCESS",
    "COMMUNICATION",
    "CODE_CHANGE",
    "SCOPE_CHANGE",
    "RESOURCE",
    "INFORMATION_SHARE",
    "DELEGATION",
    "RECORD_MUTATION",
    "UNCATEGORIZED",
)

AUTONOMY_LEVELS = ("AUTONOMOUS", "INFORM", "APPROVE_FIRST", "HARD_STOP")

# Deployment tiers and the modules each instantiates.
TIER_MODULES = {
    "memory_only": {"actors", "goals", "memory", "retrieval", "evidence", "procedures"},
    "context_only": {"actors", "goals", "working_set", "assembly", "compaction", "guards"},
    "full": {"actors", "goals", "memory", "retrieval", "evidence", "procedures",
             "working_set", "assembly", "compaction", "guards", "rerank",
             "consolidation", "firewall", "trace", "profiles", "statistics",
             "tuning"},
}

WEIGHT_DIMENSIONS = (
    "turn_relevance",
    "session_goal_relevance",
    "global_goal_relevance",
    "recency",
    "successful_use",
    "confidence",
    "evidence_strength",
    "novelty",
    "redundancy_penalty",
    "contradiction_penalty",
    "cost_penalty",
)

# Default per-source retrieval weights.
DEFAULT_SOURCE_WEIGHTS = {
    "structural": 0.4,
    "keyword": 0.3,
    "semantic": 0.5,
    "graph": 0.2,
    "artifact": 0.5,
}


class SourcePolicy(BaseModel, frozen=True):
    enabled: bool = True
    weight: float = 0.5
    fetch_count: int = 20


class RetrievalPolicy(BaseModel, frozen=True):
    sources: dict[str, SourcePolicy] = Field(default_factory=lambda: {
        name: SourcePolicy(weight=w) for name, w in DEFAULT_SOURCE_WEIGHTS.items()
    })
    graph_mode: str = "LOCAL"  # LOCAL | HYBRID | GLOBAL
    graph_depth: int = 1
    max_candidates: int = 50
    min_similarity: float = 0.0


# Auto-recall uses its own floor and cap, distinct from explicit search.
AUTO_RECALL_MIN_SIMILARITY = 0.3
AUTO_RECALL_TOP_K = 10


def auto_recall_policy(base: RetrievalPolicy) -> RetrievalPolicy:
    return base.model_copy(update={
        "min_similarity": AUTO_RECALL_MIN_SIMILARITY,
        "max_candidates": AUTO_RECALL_TOP_K,
    })


class PlacementPolicy(BaseModel, frozen=True):
    block1_constraints: bool = True
    block2_goals: bool = True
    block3_working_set: bool = True
    block4_evidence: bool = True


class ProfilePolicy(BaseModel, frozen=True):
    name: str
    weights: dict[str, float]
    half_life_hours: float
    evidence_refs_max: int
    redundancy_threshold: float
    contradiction_threshold: float
    confidence_gap: float
    budget_tokens: int
    isolation_level: str
    isolation_scope: str
    retrieval: RetrievalPolicy
    guard_strictness: str
    autonomy_matrix: dict[str, str]
    compaction_aggressiveness: str
    placement: PlacementPolicy
    flags: dict = Field(default_factory=dict)
    dedup_threshold: float = 0.97


def _base_autonomy_matrix() -> dict[str, str]:
    return {domain: "AUTONOMOUS" for domain in AUTONOMY_DOMAINS}


def _load_presets() -> dict[str, dict]:
    raw = resources.files("cogmem.data").joinpath("profiles.json").read_text()
    return json.loads(raw)


_PRESETS = _load_presets()


class UnknownPresetError(ValueError):
    def __init__(self, name: str):
        super().__init__(f"unknown profile preset {name!r}; "
                         f"available: {', '.join(PRESET_NAMES)}")


def preset_raw(name: str) -> dict:
    if name not in _PRESETS:
        raise UnknownPresetError(name)
    return _PRESETS[name]


def resolve_policy(
    preset_name: str,
    org_override: Optional[dict] = None,
    tuning_delta: Optional[dict[str, float]] = None,
) -> ProfilePolicy:
    """Flatten base -> preset -> org override -> tuning delta.

    The org override is a partial document in the preset schema; scalar
    fields replace, dict fields merge key-wise. The tuning delta maps weight
    dimensions to fractional adjustments (+0.05 means x1.05).
    """
    raw = json.loads(json.dumps(preset_raw(preset_name)))  # deep copy
    if org_override:
        for key, value in org_override.items():
            if isinstance(value, dict) and isinstance(raw.get(key), dict):
                raw[key].update(value)
            else:
                raw[key] = value
    weights = dict(raw["weights"])
    if tuning_delta:
        for dim, delta in tuning_delta.items():
            if dim in weights:
                weights[dim] = weights[dim] * (1.0 + delta)
    matrix = _base_autonomy_matrix()
    matrix.update(raw.get("autonomy_overrides", {}))
    return ProfilePolicy(
        name=preset_name,
        weights=weights,
        half_life_hours=raw["half_life_hours"],
        evidence_refs_max=raw["evidence_refs_max"],
        redundancy_threshold=raw["redundancy_threshold"],
        contradiction_threshold=raw["contradiction_threshold"],
        confidence_gap=raw["confidence_gap"],
        budget_tokens=raw["budget_tokens"],
        isolation_level=raw["isolation_level"],
        isolation_scope=raw["isolation_scope"],
        retrieval=RetrievalPolicy(
            graph_mode=raw["graph_mode"],
            graph_depth=raw["graph_depth"],
        ),
        guard_strictness=raw["guard_strictness"],
        autonomy_matrix=matrix,
        compaction_aggressiveness=raw["compaction_aggressiveness"],
        placement=PlacementPolicy(**raw.get("placement", {})),
        flags=dict(raw.get("flags", {})),
        dedup_threshold=raw.get("dedup_threshold", 0.97),
    )


class AuthorityRule(BaseModel, frozen=True):
    id: str
    action: str
    min_level: int
    requires_org_match: bool = False
    requires_team_match: bool = False
    matching_exempt_level: int = 0


class AuthorityDecision(NamedTuple):
    allowed: bool
    rule_id: Optional[str]
    reason: str


def _load_default_rules() -> list[AuthorityRule]:
    raw = resources.files("cogmem.data").joinpath("authority_rules.json").read_text()
    return [AuthorityRule.model_validate(doc) for doc in json.loads(raw)]


class RuleStore:
    """Embedded relational store for authority rules, profile overrides, and
    tuning deltas. Mutations bump a generation counter that downstream
    caches (firewall verdict cache) watch for invalidation."""

    def __init__(self, path: str = ":memory:"):
        self._conn = sqlite3.connect(path, check_same_thread=False)
        self._lock = threading.Lock()
        self.generation = 0
        with self._lock:
            self._conn.executescript("""
                CREATE TABLE IF NOT EXISTS authority_rules (
                    id TEXT PRIMARY KEY, doc TEXT NOT NULL);
                CREATE TABLE IF NOT EXISTS profile_overrides (
                    org_id TEXT, preset TEXT, doc TEXT NOT NULL,
                    PRIMARY KEY (org_id, preset));
                CREATE TABLE IF NOT EXISTS tuning_deltas (
                    preset TEXT, org_id TEXT, gateway_id TEXT, doc TEXT NOT NULL,
                    updated_at INTEGER,
                    PRIMARY KEY (preset, org_id, gateway_id));
            """)
            if not self._conn.execute("SELECT 1 FROM authority_rules LIMIT 1").fetchone():
                for rule in _load_default_rules():
                    self._conn.execute(
                        "INSERT INTO authority_rules (id, doc) VALUES (?, ?)",
                        (rule.id, rule.model_dump_json()))
            self._conn.commit()

    def rules(self) -> dict[str, AuthorityRule]:
        with self._lock:
            rows = self._conn.execute("SELECT doc FROM authority_rules").fetchall()
        return {r.action: r for r in (AuthorityRule.model_validate_json(doc)
                                      for (doc,) in rows)}

    def put_rule(self, rule: AuthorityRule) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT OR REPLACE INTO authority_rules (id, doc) VALUES (?, ?)",
                (rule.id, rule.model_dump_json()))
            self._conn.commit()
            self.generation += 1

    def set_override(self, org_id: str, preset: str, override: dict) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT OR REPLACE INTO profile_overrides (org_id, preset, doc) "
                "VALUES (?, ?, ?)", (org_id, preset, json.dumps(override)))
            self._conn.commit()
            self.generation += 1

    def get_override(self, org_id: Optional[str], preset: str) -> Optional[dict]:
        if not org_id:
            return None
        with self._lock:
            row = self._conn.execute(
                "SELECT doc FROM profile_overrides WHERE org_id=? AND preset=?",
                (org_id, preset)).fetchone()
        return json.loads(row[0]) if row else None

    def set_tuning_delta(self, preset: str, org_id: str, gateway_id: str,
                         delta: dict[str, float], updated_at: int) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT OR REPLACE INTO tuning_deltas "
                "(preset, org_id, gateway_id, doc, updated_at) VALUES (?, ?, ?, ?, ?)",
                (preset, org_id, gateway_id, json.dumps(delta), updated_at))
            self._conn.commit()

    def get_tuning_delta(self, preset: str, org_id: str, gateway_id: str
                         ) -> Optional[dict[str, float]]:
        with self._lock:
            row = self._conn.execute(
                "SELECT doc FROM tuning_deltas WHERE preset=? AND org_id=? AND gateway_id=?",
                (preset, org_id, gateway_id)).fetchone()
        return json.loads(row[0]) if row else None


def check_authority(
    actor: ActorRef,
    action: str,
    target_org: Optional[str] = None,
    target_team: Optional[str] = None,
    rules: Optional[dict[str, AuthorityRule]] = None,
) -> AuthorityDecision:
    """allowed iff active and level >= min and (memberships match or level >=
    matching_exempt_level)."""
    if rules is None:
        rules = {r.action: r for r in _load_default_rules()}
    rule = rules.get(action)
    if rule is None:
        return AuthorityDecision(False, None, f"no rule for action {action!r}")
    if not actor.active:
        return AuthorityDecision(False, rule.id, "actor is deactivated")
    if actor.authority_level < rule.min_level:
        return AuthorityDecision(
            False, rule.id,
            f"authority {actor.authority_level} below minimum {rule.min_level}")
    exempt = actor.authority_level >= rule.matching_exempt_level > 0 or (
        rule.matching_exempt_level == 0 and not (rule.requires_org_match or
                                                 rule.requires_team_match))
    membership_ok = True
    if rule.requires_org_match and (target_org is None or actor.org_id != target_org):
        membership_ok = False
    if rule.requires_team_match and (target_team is None or actor.team_id != target_team):
        membership_ok = False
    if membership_ok or exempt:
        return AuthorityDecision(True, rule.id, "allowed")
    return AuthorityDecision(False, rule.id, "membership check failed")
