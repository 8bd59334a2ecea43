"""Shared domain vocabulary: entities, enumerations, timestamps, and the
ingest-time memory-class rule table.

All types are immutable value objects with a canonical snake_case JSON
encoding (timestamps as epoch-millisecond integers). Mutation happens only
through the store.
"""

from __future__ import annotations

import math
import time
import uuid
from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field, model_validator


def now_ms() -> int:
    return int(time.time() * 1000)


class Scope(str, Enum):
    GLOBAL = "GLOBAL"
    ORGANIZATION = "ORGANIZATION"
    TEAM = "TEAM"
    ACTOR = "ACTOR"
    SESSION = "SESSION"
    TASK = "TASK"
    SUBAGENT = "SUBAGENT"
    ARTIFACT = "ARTIFACT"


class MemoryClass(str, Enum):
    EPISODIC = "EPISODIC"
    SEMANTIC = "SEMANTIC"
    PROCEDURAL = "PROCEDURAL"
    POLICY = "POLICY"
    WORKING_MEMORY = "WORKING_MEMORY"


class DecayCadence(str, Enum):
    HOURLY = "hourly"
    DAILY = "daily"
    WEEKLY = "weekly"
    MONTHLY = "monthly"


# Scope lifecycle table: (decay cadence, promotion target). GLOBAL is terminal.
SCOPE_LIFECYCLE: dict[Scope, tuple[DecayCadence, Optional[Scope]]] = {
    Scope.GLOBAL: (DecayCadence.MONTHLY, None),
    Scope.ORGANIZATION: (DecayCadence.WEEKLY, Scope.GLOBAL),
    Scope.TEAM: (DecayCadence.WEEKLY, Scope.ORGANIZATION),
    Scope.ACTOR: (DecayCadence.DAILY, Scope.TEAM),
    Scope.SESSION: (DecayCadence.HOURLY, Scope.ACTOR),
    Scope.TASK: (DecayCadence.HOURLY, Scope.SESSION),
    Scope.SUBAGENT: (DecayCadence.HOURLY, Scope.SESSION),
    Scope.ARTIFACT: (DecayCadence.DAILY, Scope.ACTOR),
}


def promotion_target(scope: Scope) -> Optional[Scope]:
    """Next scope on the promotion ladder; None for terminal GLOBAL."""
    return SCOPE_LIFECYCLE[scope][1]


def decay_cadence(scope: Scope) -> DecayCadence:
    return SCOPE_LIFECYCLE[scope][0]


# The 12 built-in fact categories and their ingest-time memory-class mapping.
# "general" is not pinned to a class anywhere authoritative; it maps to
# SEMANTIC, the retention-conservative default.
CATEGORY_CLASS_RULES: dict[str, MemoryClass] = {
    "identity": MemoryClass.SEMANTIC,
    "preference": MemoryClass.SEMANTIC,
    "trait": MemoryClass.SEMANTIC,
    "relationship": MemoryClass.SEMANTIC,
    "project": MemoryClass.SEMANTIC,
    "system": MemoryClass.SEMANTIC,
    "general": MemoryClass.SEMANTIC,
    "event": MemoryClass.EPISODIC,
    "decision": MemoryClass.EPISODIC,
    "verification": MemoryClass.EPISODIC,
    "constraint": MemoryClass.POLICY,
    "procedure_reference": MemoryClass.POLICY,
}

BUILTIN_CATEGORIES = frozenset(CATEGORY_CLASS_RULES)

_VALID_CLASS_NAMES = {c.value for c in MemoryClass}

CLASSIFY_PROMPT_TEMPLATE = (
    "Classify the memory category {category!r} into exactly one of: "
    "EPISODIC, SEMANTIC, PROCEDURAL, POLICY, WORKING_MEMORY. "
    "Answer with the single class name."
)


def classify_memory_class(category: str, llm=None) -> MemoryClass:
    """Resolve a category label to a memory class.

    Built-in categories resolve through the rule table without touching the
    provider. Custom categories invoke the provider once; on provider failure
    or an unparseable answer the conservative default SEMANTIC is used.
    """
    if not category:
        raise ValueError("category must be non-empty")
    rule = CATEGORY_CLASS_RULES.get(category)
    if rule is not None:
        return rule
    if llm is None:
        return MemoryClass.SEMANTIC
    try:
        answer = llm.complete(CLASSIFY_PROMPT_TEMPLATE.format(category=category), {})
    except Exception:
        return MemoryClass.SEMANTIC
    token = answer.strip().split()[0].upper() if answer and answer.strip() else ""
    if token in _VALID_CLASS_NAMES:
        return MemoryClass(token)
    return MemoryClass.SEMANTIC


# Actor vocabulary: 12 actor types and 12 relationship types, shipped as
# data. Behavior keys off trust_level / authority_level only.
ACTOR_TYPES = (
    "human_coordinator",
    "human_operator",
    "human_external",
    "agent_manager",
    "agent_worker",
    "agent_reviewer",
    "agent_supervisor",
    "agent_peer",
    "agent_service",
    "agent_external",
    "team",
    "organization",
)

RELATIONSHIP_EDGE_TYPES = (
    "delegates_to",
    "supervises",
    "reports_to",
    "collaborates_with",
    "trusts",
    "blocks",
    "owns_goal",
    "owns_artifact",
    "requested_by",
    "approved_by",
    "verified_by",
    "prohibited_by",
)

STRUCTURAL_EDGE_TYPES = (
    "authorship",
    "actor_about",
    "goal_serving",
    "goal_ownership",
    "parent_child",
    "supersession",
    "contradiction",
)

EDGE_TYPES = STRUCTURAL_EDGE_TYPES + RELATIONSHIP_EDGE_TYPES

_ACTOR_NAMESPACE = uuid.UUID("6ba7b810-9dad-11d1-80b4-00c04fd430c8")


def actor_id(gateway_id: str, natural_key: str) -> str:
    """Deterministic UUIDv5 actor id, stable across restarts."""
    return str(uuid.uuid5(_ACTOR_NAMESPACE, f"{gateway_id}:{natural_key}"))


def new_fact_id() -> str:
    return str(uuid.uuid4())


def default_token_count(text: str) -> int:
    """Whitespace-token count x 1.3, rounded up. Documented approximation."""
    n = len(text.split())
    return math.ceil(n * 1.3)


class GoalLink(BaseModel, frozen=True):
    goal_id: str
    strength: str  # "direct" | "indirect"

    @model_validator(mode="after")
    def _check_strength(self):
        if self.strength not in ("direct", "indirect"):
            raise ValueError(f"invalid goal link strength {self.strength!r}")
        return self


class FactAssertion(BaseModel, frozen=True):
    """The unit of memory."""

    id: str = Field(default_factory=new_fact_id)
    text: str
    category: str = "general"
    scope: Scope = Scope.SESSION
    memory_class: MemoryClass = MemoryClass.SEMANTIC
    confidence: float = 0.7
    source_actor: str = ""
    about_actors: tuple[str, ...] = ()
    goal_links: tuple[GoalLink, ...] = ()
    session_key: str = ""
    session_id: str = ""
    gateway_id: str = ""
    org_id: Optional[str] = None
    team_id: Optional[str] = None
    event_ts: int = Field(default_factory=now_ms)
    ingest_ts: int = Field(default_factory=now_ms)
    update_ts: int = 0
    last_used_ts: int = 0
    use_count: int = 0
    successful_use_count: int = 0
    recall_count: int = 0
    token_count: int = 0
    archived: bool = False

    @model_validator(mode="after")
    def _check(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0,1]")
        update_ts = self.update_ts or self.ingest_ts
        if self.ingest_ts > update_ts:
            raise ValueError("ingest_ts must be <= update_ts")
        if self.successful_use_count > self.use_count:
            raise ValueError("successful_use_count must be <= use_count")
        if min(self.use_count, self.successful_use_count, self.recall_count,
               self.token_count) < 0:
            raise ValueError("counters must be non-negative")
        if self.category in BUILTIN_CATEGORIES:
            expected = CATEGORY_CLASS_RULES[self.category]
            if self.memory_class is not expected:
                raise ValueError(
                    f"category {self.category!r} requires memory class "
                    f"{expected.value}, got {self.memory_class.value}"
                )
        object.__setattr__(self, "update_ts", update_ts)
        if not self.token_count:
            object.__setattr__(self, "token_count", default_token_count(self.text))
        return self


class ActorRef(BaseModel, frozen=True):
    id: str
    actor_type: str = "agent_worker"
    display_name: str = ""
    platform_handles: tuple[str, ...] = ()
    trust_level: float = 0.5
    authority_level: int = 0
    org_id: Optional[str] = None
    team_id: Optional[str] = None
    active: bool = True

    @model_validator(mode="after")
    def _check(self):
        if self.actor_type not in ACTOR_TYPES:
            raise ValueError(f"unknown actor type {self.actor_type!r}")
        if not 0.0 <= self.trust_level <= 1.0:
            raise ValueError("trust_level must be in [0,1]")
        if self.authority_level < 0:
            raise ValueError("authority_level must be >= 0")
        return self


class TypedEdge(BaseModel, frozen=True):
    edge_type: str
    from_id: str
    to_id: str
    valid_from: int = Field(default_factory=now_ms)
    valid_until: Optional[int] = None
    properties: dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self):
        if self.edge_type not in EDGE_TYPES:
            raise ValueError(f"unknown edge type {self.edge_type!r}")
        return self

    def key(self) -> tuple[str, str, str, int]:
        """Idempotence key for edge insertion."""
        return (self.edge_type, self.from_id, self.to_id, self.valid_from)

    def live_at(self, ts: int) -> bool:
        return self.valid_from <= ts and (self.valid_until is None or ts < self.valid_until)
