"""Two-bucket goal tracking: a TTL-bounded per-session cache plus durable
goal nodes in the knowledge graph.

Hints arrive in two tiers. Status hints (completed, abandoned, blocked,
progressed) mutate state directly at zero model cost. Content hints
(refined, new_subgoal) are handed to the provider on a background worker so
the hot path never blocks on a model call.
"""

from __future__ import annotations

import uuid
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

from pydantic import BaseModel, Field

from .embeddings import EmbeddingService
from .model import TypedEdge, now_ms
from .providers import LanguageModelProvider
from .rerank import token_overlap
from .store import GOAL_COLLECTION, MemoryStore

GOAL_STATUSES = ("PROPOSED", "ACTIVE", "BLOCKED", "COMPLETED", "ABANDONED")
TIER1_KINDS = ("completed", "abandoned", "blocked", "progressed")
TIER2_KINDS = ("refined", "new_subgoal")

SIBLING_DEDUP_JACCARD = 0.5
SESSION_SUBGOAL_CAP = 10
SESSION_GOAL_TTL_MS = 24 * 3_600_000

# Only these statuses compete for working-set slots.
CANDIDATE_STATUSES = ("PROPOSED", "ACTIVE", "BLOCKED")


class GoalState(BaseModel, frozen=True):
    id: str = Field(default_factory=lambda: str(uuid.uuid4()))
    title: str
    description: str = ""
    status: str = "ACTIVE"
    blockers: tuple[str, ...] = ()
    progress_notes: tuple[str, ...] = ()
    parent_id: Optional[str] = None
    owner_actor: Optional[str] = None
    scope: str = "ACTOR"  # GLOBAL | ORGANIZATION | TEAM | ACTOR
    org_id: Optional[str] = None
    team_id: Optional[str] = None
    confidence: float = 0.5
    ttl_expires_at: int = 0
    session_key: str = ""


class GoalHint(BaseModel, frozen=True):
    goal_id: str
    kind: str
    payload: str = ""


class FlushReport(BaseModel, frozen=True):
    flushed: tuple[str, ...] = ()
    failed: tuple[str, ...] = ()


class GoalManager:
    def __init__(
        self,
        store: MemoryStore,
        embeddings: Optional[EmbeddingService] = None,
        provider: Optional[LanguageModelProvider] = None,
        ttl_ms: int = SESSION_GOAL_TTL_MS,
        subgoal_cap: int = SESSION_SUBGOAL_CAP,
        clock: Optional[Callable[[], int]] = None,
    ):
        self.store = store
        self.embeddings = embeddings
        self.provider = provider
        self.ttl_ms = ttl_ms
        self.subgoal_cap = subgoal_cap
        self.clock = clock or now_ms
        self._sessions: dict[str, dict[str, GoalState]] = {}
        self._subgoal_counts: dict[str, int] = {}
        self._flushed: dict[str, set[str]] = {}
        self._pool = ThreadPoolExecutor(max_workers=2)
        self._pending = []

    # session bucket

    def create_session_goal(self, session_key: str, title: str,
                            **kw) -> GoalState:
        kw.setdefault("ttl_expires_at", self.clock() + self.ttl_ms)
        goal = GoalState(title=title, session_key=session_key, **kw)
        cache = self._sessions.setdefault(session_key, {})
        if goal.parent_id and self._creates_cycle(cache, goal):
            raise ValueError("goal parent link would create a cycle")
        cache[goal.id] = goal
        return goal

    def _creates_cycle(self, cache, goal) -> bool:
        seen = {goal.id}
        cursor = goal.parent_id
        while cursor is not None:
            if cursor in seen:
                return True
            seen.add(cursor)
            parent = cache.get(cursor)
            cursor = parent.parent_id if parent else None
        return False

    def session_goals(self, session_key: str,
                      include_expired: bool = False) -> list[GoalState]:
        now = self.clock()
        goals = self._sessions.get(session_key, {}).values()
        if include_expired:
            return list(goals)
        return [g for g in goals if g.ttl_expires_at == 0
                or g.ttl_expires_at > now]

    def candidate_goals(self, session_key: str) -> list[GoalState]:
        """Goals eligible for the working set; blocked goals stay candidates
        so their blockers surface to the supervisor."""
        return [g for g in self.session_goals(session_key)
                if g.status in CANDIDATE_STATUSES]

    def get_goal(self, session_key: str, goal_id: str) -> Optional[GoalState]:
        goal = self._sessions.get(session_key, {}).get(goal_id)
        if goal is not None:
            return goal
        node = self.store.graph.get_node(goal_id)
        if node is not None and node[0] == "Goal":
            return GoalState.model_validate(node[1])
        return None

    # hints

    def apply_hint(self, hint: GoalHint, session_key: str) -> Optional[GoalState]:
        if hint.kind not in TIER1_KINDS + TIER2_KINDS:
            raise ValueError(f"unknown hint kind {hint.kind!r}")
        goal = self.get_goal(session_key, hint.goal_id)
        if goal is None:
            self.store.ledger.emit("goal_audit", {
                "goal_id": hint.goal_id, "kind": hint.kind,
                "dropped": "unknown goal",
            }, session_key=session_key, gateway_id=self.store.gateway_id)
            return None
        if hint.kind in TIER1_KINDS:
            return self._apply_tier1(hint, goal, session_key)
        future = self._pool.submit(self._apply_tier2, hint, goal, session_key)
        self._pending.append(future)
        return goal

    def drain(self) -> None:
        """Wait for queued tier-2 work; a test and shutdown barrier."""
        pending, self._pending = self._pending, []
        for future in pending:
            future.result()

    def _apply_tier1(self, hint, goal, session_key) -> GoalState:
        changes: dict = {}
        if hint.kind == "completed":
            changes["status"] = "COMPLETED"
            changes["confidence"] = 1.0
            if hint.payload:
                changes["progress_notes"] = goal.progress_notes + (hint.payload,)
        elif hint.kind == "abandoned":
            changes["status"] = "ABANDONED"
            if hint.payload:
                changes["progress_notes"] = goal.progress_notes + (hint.payload,)
        elif hint.kind == "blocked":
            changes["status"] = "BLOCKED"
            if hint.payload:
                changes["blockers"] = goal.blockers + (hint.payload,)
        elif hint.kind == "progressed":
            changes["status"] = "ACTIVE" if goal.status in ("PROPOSED", "ACTIVE",
                                                            "BLOCKED") else goal.status
            if hint.payload:
                changes["progress_notes"] = goal.progress_notes + (hint.payload,)
            if goal.status == "BLOCKED":
                changes["blockers"] = ()
        updated = goal.model_copy(update=changes)
        self._put(session_key, updated)
        self._audit(updated, hint.kind, goal.status, session_key)
        if hint.kind == "completed" and updated.parent_id:
            self.propagate_completion(updated.id, session_key)
        return updated

    def _apply_tier2(self, hint, goal, session_key) -> Optional[GoalState]:
        if hint.kind == "refined":
            description = goal.description
            if self.provider is not None:
                try:
                    description = self.provider.complete(
                        f"Refine this goal given new information.\n"
                        f"Goal: {goal.title}\nUpdate: {hint.payload}", {})
                except Exception:
                    description = goal.description
            updated = goal.model_copy(update={
                "description": description or goal.description,
                "progress_notes": goal.progress_notes + (hint.payload,)
                if hint.payload else goal.progress_notes,
            })
            self._put(session_key, updated)
            self._audit(updated, hint.kind, goal.status, session_key)
            return updated
        # new_subgoal
        title = hint.payload.strip()
        if not title:
            return None
        siblings = [g for g in self.session_goals(session_key)
                    if g.parent_id == goal.id]
        if any(token_overlap(title, s.title) > SIBLING_DEDUP_JACCARD
               for s in siblings):
            self.store.ledger.emit("goal_audit", {
                "goal_id": goal.id, "kind": "new_subgoal",
                "dropped": "sibling title duplicate", "title": title,
            }, session_key=session_key, gateway_id=self.store.gateway_id)
            return None
        if self._subgoal_counts.get(session_key, 0) >= self.subgoal_cap:
            self.store.ledger.emit("goal_audit", {
                "goal_id": goal.id, "kind": "new_subgoal",
                "dropped": "session subgoal cap", "title": title,
            }, session_key=session_key, gateway_id=self.store.gateway_id)
            return None
        description = ""
        if self.provider is not None:
            try:
                description = self.provider.complete(
                    f"Describe the subgoal: {title}", {})
            except Exception:
                description = ""
        subgoal = self.create_session_goal(
            session_key, title, description=description, parent_id=goal.id,
            owner_actor=goal.owner_actor, scope=goal.scope,
            org_id=goal.org_id, team_id=goal.team_id)
        self._subgoal_counts[session_key] = \
            self._subgoal_counts.get(session_key, 0) + 1
        self._audit(subgoal, "new_subgoal", None, session_key)
        return subgoal

    def propagate_completion(self, subgoal_id: str,
                             session_key: str) -> Optional[GoalState]:
        child = self.get_goal(session_key, subgoal_id)
        if child is None or child.parent_id is None:
            return None
        parent = self.get_goal(session_key, child.parent_id)
        if parent is None:
            return None
        children = [g for g in self.session_goals(session_key,
                                                  include_expired=True)
                    if g.parent_id == parent.id]
        if not children:
            return parent
        done = sum(1 for g in children if g.status == "COMPLETED")
        updated = parent.model_copy(update={"confidence": done / len(children)})
        self._put(session_key, updated)
        return updated

    # persistent bucket

    def create_persistent_goal(self, title: str, scope: str = "ACTOR",
                               **kw) -> GoalState:
        goal = GoalState(title=title, scope=scope, ttl_expires_at=0, **kw)
        self._persist(goal)
        return goal

    def query_visible_goals(
        self,
        actor: Optional[str] = None,
        org: Optional[str] = None,
        team: Optional[str] = None,
        scope_filter: Optional[str] = None,
    ) -> list[GoalState]:
        out = []
        for node_id in self.store.graph.nodes_by_label("Goal"):
            _, props = self.store.graph.get_node(node_id)
            goal = GoalState.model_validate(props)
            if scope_filter and goal.scope != scope_filter:
                continue
            if goal.owner_actor and goal.owner_actor != actor:
                continue
            if goal.scope == "ORGANIZATION" and goal.org_id \
                    and goal.org_id != org:
                continue
            if goal.scope == "TEAM" and goal.team_id and goal.team_id != team:
                continue
            out.append(goal)
        out.sort(key=lambda g: g.id)
        return out

    def flush_session_goals(self, session_key: str) -> FlushReport:
        """Persist every session goal to the graph with its final status,
        blockers, and notes. Safe to call twice: goals merge by id."""
        flushed, failed = [], []
        for goal in self.session_goals(session_key, include_expired=True):
            try:
                self._persist(goal)
                flushed.append(goal.id)
                self.store.ledger.emit("goal_flushed", {
                    "goal_id": goal.id, "status": goal.status,
                    "blockers": list(goal.blockers),
                }, session_key=session_key, gateway_id=self.store.gateway_id)
            except Exception:
                failed.append(goal.id)
        return FlushReport(flushed=tuple(flushed), failed=tuple(failed))

    def _persist(self, goal: GoalState) -> None:
        self.store.graph.put_node(goal.id, "Goal", goal.model_dump(mode="json"))
        if self.embeddings is not None:
            self.store.vectors.upsert(GOAL_COLLECTION, goal.id,
                                      self.embeddings.embed_one(goal.title),
                                      {"scope": goal.scope})
        if goal.parent_id and self.store.graph.has_node(goal.parent_id):
            self.store.graph.add_edge(TypedEdge(
                edge_type="parent_child", from_id=goal.parent_id,
                to_id=goal.id, valid_from=0))
        if goal.owner_actor and self.store.graph.has_node(goal.owner_actor):
            self.store.graph.add_edge(TypedEdge(
                edge_type="goal_ownership", from_id=goal.owner_actor,
                to_id=goal.id, valid_from=0))

    # plumbing

    def _put(self, session_key: str, goal: GoalState) -> None:
        if goal.id in self._sessions.get(session_key, {}):
            self._sessions[session_key][goal.id] = goal
        elif self.store.graph.has_node(goal.id):
            self.store.graph.put_node(goal.id, "Goal",
                                      goal.model_dump(mode="json"))

    def _audit(self, goal: GoalState, kind: str, prior_status: Optional[str],
               session_key: str) -> None:
        self.store.ledger.emit("goal_audit", {
            "goal_id": goal.id, "kind": kind,
            "prior_status": prior_status, "new_status": goal.status,
        }, session_key=session_key, gateway_id=self.store.gateway_id)
