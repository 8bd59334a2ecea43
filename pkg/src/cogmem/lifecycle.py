"""Per-turn session orchestration.

Five phases: bootstrap resolves an immutable profile and registers the
agent actor; assemble runs retrieval, rerank, a safety preflight, and
budgeted scoring, then lays the result out as four blocks on two prompt
surfaces; compact shrinks long conversations in two stages; after_turn
detects which injected facts the agent actually used and feeds that back
into use counters; the two subagent hooks hand a filtered working set to a
child session and merge its results back.
"""

from __future__ import annotations

import hashlib
import uuid
from dataclasses import dataclass, field
from typing import Optional

from .embeddings import EmbeddingService, cosine_similarity
from .evidence import EvidenceEngine
from .goals import GoalHint, GoalManager, GoalState
from .guard import GuardEngine
from .model import MemoryClass, actor_id, default_token_count
from .procedures import ProcedureEngine
from .profiles import ProfilePolicy, RuleStore, resolve_policy
from .rerank import Reranker
from .retrieval import Retriever
from .scoring import (
    ScoredCandidate,
    WorkingSet,
    build_scoring_context,
    score_pass1,
    select_working_set,
)
from .store import FACT_COLLECTION, IsolationPolicy, MemoryStore

CLASS_RANK = {
    MemoryClass.POLICY: 0,
    MemoryClass.PROCEDURAL: 1,
    MemoryClass.SEMANTIC: 2,
    MemoryClass.EPISODIC: 3,
    MemoryClass.WORKING_MEMORY: 4,
}

COMPACTION_MULTIPLIERS = {"aggressive": 1.3, "balanced": 2.0, "minimal": 4.0}
COMPRESS_TOKEN_THRESHOLD = 500
TOPIC_RUN_COSINE = 0.8
TOPIC_RUN_LENGTH = 3
FILLER_MAX_TOKENS = 3
PRESERVE_KEYWORDS = ("decision", "decided", "goal", "evidence")

TOOL_REPLACEMENT_MIN_TOKENS = 100
TOOL_PROTECTED_TAIL = 4
CONVERSATION_DEDUP_JACCARD = 0.7

SIGNAL_WEIGHTS = {"s1": 0.95, "s2": 0.70, "s3": 0.50, "s4": 0.40, "s5": 0.35}
S5_COSINE = 0.6
USE_JACCARD = 0.3
IGNORED_TURNS = 3

GOAL_REINJECT_INTERVAL = 5
SUBAGENT_BUDGET_FACTOR = 2
SUBAGENT_GOAL_COSINE = 0.3


@dataclass
class SessionContext:
    session_key: str
    session_id: str
    gateway_id: str
    resolved_profile: ProfilePolicy
    actor: str = ""
    org_id: Optional[str] = None
    team_id: Optional[str] = None
    turn: int = 0
    compacted_ids: set = field(default_factory=set)
    active_executions: list = field(default_factory=list)
    goal_injection_history: dict = field(default_factory=dict)
    subagent_children: list = field(default_factory=list)
    last_working_set: Optional[WorkingSet] = None
    ignored_counts: dict = field(default_factory=dict)


@dataclass
class AssembledContext:
    surface_a_block1: list = field(default_factory=list)
    surface_b_block2: list = field(default_factory=list)
    surface_b_block3: list = field(default_factory=list)
    surface_b_block4: list = field(default_factory=list)
    replaced_tool_outputs: list = field(default_factory=list)
    conversation: list = field(default_factory=list)
    working_set: Optional[WorkingSet] = None
    guard_result: str = "pass"
    degraded: list = field(default_factory=list)


def _tokens(text: str) -> set[str]:
    return set(text.lower().split())


def _jaccard(a: set[str], b: set[str]) -> float:
    if not a or not b:
        return 0.0
    return len(a & b) / len(a | b)


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


class ContextLifecycle:
    def __init__(self, store: MemoryStore, embeddings: EmbeddingService,
                 provider=None,
                 retriever: Optional[Retriever] = None,
                 reranker: Optional[Reranker] = None,
                 guard: Optional[GuardEngine] = None,
                 goals: Optional[GoalManager] = None,
                 evidence: Optional[EvidenceEngine] = None,
                 procedures: Optional[ProcedureEngine] = None,
                 rule_store: Optional[RuleStore] = None):
        self.store = store
        self.embeddings = embeddings
        self.provider = provider
        self.retriever = retriever or Retriever(store, embeddings)
        self.reranker = reranker or Reranker(ledger=store.ledger)
        self.guard = guard
        self.goals = goals
        self.evidence = evidence or EvidenceEngine(store)
        self.procedures = procedures
        self.rule_store = rule_store
        self.sessions: dict[str, SessionContext] = {}
        self._subagents: dict[str, str] = {}

    # bootstrap

    def bootstrap(self, descriptor: dict) -> SessionContext:
        gateway = descriptor.get("gateway_id", "")
        if not gateway:
            raise ValueError("gateway_id is required")
        session_key = descriptor.get("session_key", "")
        if not session_key:
            raise ValueError("session_key is required")
        existing = self.sessions.get(session_key)
        if existing is not None:
            return existing
        preset = descriptor.get("profile", "coding")
        org_id = descriptor.get("org_id")
        override = tuning = None
        if self.rule_store is not None:
            override = self.rule_store.get_override(org_id, preset)
            tuning = self.rule_store.get_tuning_delta(
                preset, org_id or "", gateway)
        profile = resolve_policy(preset, org_override=override,
                                 tuning_delta=tuning)
        agent = descriptor.get("agent_key", "agent")
        agent_actor = actor_id(gateway, agent)
        if not self.store.graph.has_node(agent_actor):
            self.store.graph.put_node(agent_actor, "Actor", {
                "id": agent_actor, "actor_type": "agent",
                "display_name": agent, "authority_level": 10,
            })
        context = SessionContext(
            session_key=session_key, session_id=str(uuid.uuid4()),
            gateway_id=gateway, resolved_profile=profile,
            actor=descriptor.get("actor", agent_actor),
            org_id=org_id, team_id=descriptor.get("team_id"))
        self.sessions[session_key] = context
        if self.goals is not None:
            self.goals.session_goals(session_key)
        self.store.ledger.emit("session_boundary", {
            "phase": "start", "session_id": context.session_id,
            "profile": profile.name,
        }, session_key=session_key, gateway_id=gateway)
        return context

    def session_end(self, session_key: str) -> None:
        context = self.sessions.pop(session_key, None)
        if context is None:
            return
        if self.goals is not None:
            self.goals.flush_session_goals(session_key)
        self.store.ledger.emit("session_boundary", {
            "phase": "end", "session_id": context.session_id,
        }, session_key=session_key, gateway_id=context.gateway_id)

    def _require(self, session_key: str) -> SessionContext:
        context = self.sessions.get(session_key)
        if context is None:
            raise KeyError(f"session {session_key!r} is not bootstrapped")
        return context

    # assemble

    def assemble(self, session_key: str, turn_text: str,
                 conversation: Optional[list[dict]] = None
                 ) -> AssembledContext:
        context = self._require(session_key)
        context.turn += 1
        profile = context.resolved_profile
        out = AssembledContext()

        candidates = []
        try:
            candidates = self.retriever.retrieve(
                turn_text, profile.retrieval,
                IsolationPolicy(level=profile.isolation_level,
                                scope=profile.isolation_scope),
                session_key=session_key, actor=context.actor)
            query_vec = self.embeddings.embed_one(turn_text)
            candidates = self.reranker.rerank(turn_text, candidates,
                                              query_embedding=query_vec)
        except Exception as exc:
            out.degraded.append(f"retrieval: {exc}")

        verdict = None
        if self.guard is not None and profile.placement.block1_constraints:
            try:
                verdict = self.guard.evaluate({"description": turn_text},
                                              session_key, profile)
                out.guard_result = verdict.result
            except Exception as exc:
                out.degraded.append(f"guard: {exc}")

        session_goals = (self.goals.session_goals(session_key)
                         if self.goals else [])
        try:
            ctx = build_scoring_context(
                self.store, self.evidence, self.embeddings, turn_text,
                session_goals=[{"id": g.id, "title": g.title,
                                "parent_id": g.parent_id}
                               for g in session_goals],
                compacted_ids=context.compacted_ids)
            scored = [score_pass1(c, ctx, profile) for c in candidates]
            working = select_working_set(scored, ctx, profile,
                                         profile.budget_tokens,
                                         store=self.store)
        except Exception as exc:
            out.degraded.append(f"scoring: {exc}")
            working = WorkingSet(items=[], budget_tokens=profile.budget_tokens,
                                 used_tokens=0, over_allocated=False)
        out.working_set = working
        context.last_working_set = working

        if profile.placement.block1_constraints:
            if verdict is not None:
                out.surface_a_block1.extend(
                    {"kind": "guard_reinjection", "text": text}
                    for text in verdict.reinjection_items)
            out.surface_a_block1.extend(self._proof_required_steps(context))

        if profile.placement.block2_goals and self.goals is not None:
            out.surface_b_block2 = self._goals_block(context, turn_text,
                                                     session_goals)

        if profile.placement.block3_working_set:
            out.surface_b_block3 = sorted(
                working.items,
                key=lambda s: (CLASS_RANK.get(
                    s.candidate.fact.memory_class
                    if s.candidate.fact else MemoryClass.SEMANTIC, 4),
                    -s.final_score, s.fact_id))

        if profile.placement.block4_evidence:
            out.surface_b_block4 = self._evidence_block(
                out.surface_b_block3 or working.items, profile)

        out.conversation, out.replaced_tool_outputs = \
            self._process_conversation(conversation or [], out, profile)
        return out

    def _proof_required_steps(self, context: SessionContext) -> list[dict]:
        if self.procedures is None:
            return []
        items = []
        for execution in self.procedures.active_executions(
                context.session_key):
            if not self.procedures.requires_proof(execution.id):
                continue
            definition = self.procedures.get_definition(
                execution.procedure_id)
            for index, proof_type in self.procedures.outstanding_proofs(
                    execution.id):
                items.append({
                    "kind": "procedure_step",
                    "procedure": definition.name,
                    "text": definition.steps[index].instruction,
                    "proof_required": proof_type,
                })
        return items

    def _goals_block(self, context: SessionContext, turn_text: str,
                     session_goals: list[GoalState]) -> list[dict]:
        block = []
        turn_tokens = _tokens(turn_text)
        for goal in session_goals:
            history = context.goal_injection_history.get(goal.id)
            mentioned = any(tok in turn_tokens
                            for tok in _tokens(goal.title) if len(tok) >= 4)
            if history is None:
                # never injected before; covers the turn-1 condition
                inject = True
            else:
                inject = (
                    history["last_status"] != goal.status
                    or history["last_blockers"] != goal.blockers
                    or context.turn - history["last_turn"]
                    >= GOAL_REINJECT_INTERVAL
                    or mentioned)
            if not inject:
                continue
            context.goal_injection_history[goal.id] = {
                "last_turn": context.turn, "last_status": goal.status,
                "last_blockers": goal.blockers,
            }
            block.append({
                "goal_id": goal.id, "title": goal.title,
                "status": goal.status, "blockers": list(goal.blockers),
                "highlight": bool(goal.blockers),
            })
        return block

    def _evidence_block(self, items: list[ScoredCandidate],
                        profile: ProfilePolicy) -> list[dict]:
        refs = []
        for item in items:
            for claim in self.evidence.claims_for_fact(item.fact_id):
                for ref in self.evidence.evidence_for_claim(claim.id):
                    refs.append({
                        "fact_id": item.fact_id, "claim_id": claim.id,
                        "claim_state": claim.state,
                        "evidence_type": ref.evidence_type,
                        "ref": ref.ref_value,
                    })
                    if len(refs) >= profile.evidence_refs_max:
                        return refs
        return refs

    def _process_conversation(self, conversation: list[dict],
                              assembled: AssembledContext,
                              profile: ProfilePolicy
                              ) -> tuple[list[dict], list[dict]]:
        placeholders = []
        seen_digests: set[str] = set()
        out = []
        cutoff = max(0, len(conversation) - TOOL_PROTECTED_TAIL)
        dedup = profile.flags.get("conversation_dedup", False)
        block3_tokens = [_tokens(s.candidate.text)
                         for s in assembled.surface_b_block3]
        for index, message in enumerate(conversation):
            content = message.get("content", "")
            role = message.get("role", "user")
            if role == "tool" and dedup and any(
                    _jaccard(_tokens(content), toks) >=
                    CONVERSATION_DEDUP_JACCARD for toks in block3_tokens):
                continue
            tokens = message.get("token_count") or default_token_count(content)
            if role == "tool" and index < cutoff \
                    and tokens > TOOL_REPLACEMENT_MIN_TOKENS:
                digest = _digest(content)
                if digest in seen_digests:
                    continue
                seen_digests.add(digest)
                placeholder = self._placeholder(message, digest)
                placeholders.append(placeholder)
                out.append(placeholder)
                continue
            out.append(message)
        return out, placeholders

    @staticmethod
    def _placeholder(message: dict, digest: str) -> dict:
        tool = message.get("tool_name", "tool")
        summary = " ".join(message.get("content", "").split()[:25])
        return {
            "role": "tool",
            "tool_name": tool,
            "content": f"[{tool} output replaced; summary: {summary} "
                       f"(search ref {digest})]",
            "replaced": True,
        }

    # compact

    def compact(self, session_key: str, conversation: list[dict]) -> dict:
        context = self._require(session_key)
        profile = context.resolved_profile
        multiplier = COMPACTION_MULTIPLIERS.get(
            profile.compaction_aggressiveness, 2.0)
        total = sum(m.get("token_count") or
                    default_token_count(m.get("content", ""))
                    for m in conversation)
        target = profile.budget_tokens
        report = {"triggered": False, "preserved": 0, "compressed": 0,
                  "dropped": 0, "kept": 0, "degraded": False,
                  "conversation": conversation}
        if total <= multiplier * target:
            return report
        report["triggered"] = True

        labels = self._classify_messages(conversation)
        compress_bucket = [m for m, label in zip(conversation, labels)
                           if label == "COMPRESS"]
        for m, label in zip(conversation, labels):
            for fact_id in m.get("fact_ids", []):
                if label in ("COMPRESS", "DROP"):
                    context.compacted_ids.add(fact_id)

        summary_message = None
        if compress_bucket and self.provider is not None:
            joined = "\n".join(m.get("content", "") for m in compress_bucket)
            try:
                summary = self.provider.complete(
                    "Summarize the following conversation excerpts in one "
                    "to three paragraphs:\n" + joined,
                    {"temperature": 0.1})
                summary_message = {"role": "system", "content": summary,
                                   "kind": "compaction_summary"}
            except Exception:
                report["degraded"] = True
        elif compress_bucket:
            report["degraded"] = True

        out = []
        compress_emitted = False
        for message, label in zip(conversation, labels):
            if label == "DROP":
                report["dropped"] += 1
            elif label == "COMPRESS":
                report["compressed"] += 1
                if summary_message is not None:
                    if not compress_emitted:
                        out.append(summary_message)
                        compress_emitted = True
                else:
                    out.append(message)  # degraded: keep verbatim
            elif label == "PRESERVE":
                report["preserved"] += 1
                out.append(message)
            else:
                report["kept"] += 1
                out.append(message)
        report["conversation"] = out
        self.store.ledger.emit("compaction", {
            "preserved": report["preserved"],
            "compressed": report["compressed"],
            "dropped": report["dropped"], "degraded": report["degraded"],
        }, session_key=session_key, gateway_id=context.gateway_id)
        return report

    def _classify_messages(self, conversation: list[dict]) -> list[str]:
        last_agent = max((i for i, m in enumerate(conversation)
                          if m.get("role") == "assistant"), default=-1)
        embeddings = self.embeddings.embed_batch(
            [m.get("content", "") for m in conversation]) \
            if conversation else []
        in_run = self._topic_runs(embeddings)
        labels = []
        seen: set[str] = set()
        for index, message in enumerate(conversation):
            content = message.get("content", "")
            tokens = message.get("token_count") or default_token_count(content)
            lowered = content.lower()
            if message.get("memory_class") == "POLICY" \
                    or message.get("kind") in ("decision", "goal", "evidence") \
                    or index == last_agent \
                    or any(k in lowered for k in PRESERVE_KEYWORDS):
                labels.append("PRESERVE")
                continue
            digest = _digest(content)
            if digest in seen or default_token_count(content) \
                    <= FILLER_MAX_TOKENS:
                labels.append("DROP")
                continue
            seen.add(digest)
            if tokens > COMPRESS_TOKEN_THRESHOLD or in_run[index]:
                labels.append("COMPRESS")
            else:
                labels.append("KEEP")
        return labels

    @staticmethod
    def _topic_runs(embeddings) -> list[bool]:
        n = len(embeddings)
        flags = [False] * n
        start = 0
        for i in range(1, n + 1):
            connected = (
                i < n and cosine_similarity(embeddings[i - 1], embeddings[i])
                >= TOPIC_RUN_COSINE)
            if not connected:
                if i - start >= TOPIC_RUN_LENGTH:
                    for j in range(start, i):
                        flags[j] = True
                start = i
        return flags

    # after-turn

    def after_turn(self, session_key: str, injected_items: list,
                   agent_response: str,
                   tools_invoked: tuple[str, ...] = ()) -> dict:
        context = self._require(session_key)
        profile = context.resolved_profile
        facts = []
        for item in injected_items:
            fact_id = getattr(item, "fact_id", item)
            fact = self.store.get_fact(fact_id)
            if fact is not None:
                facts.append(fact)
        response_lower = agent_response.lower()
        response_tokens = _tokens(agent_response)
        response_vec = self.embeddings.embed_one(agent_response) \
            if facts else None

        report = {}
        for fact in facts:
            signals = {}
            if fact.text.lower() in response_lower:
                signals["s1"] = SIGNAL_WEIGHTS["s1"]
            fact_lower = fact.text.lower()
            if any(tool and tool.lower() in fact_lower
                   for tool in tools_invoked):
                signals["s2"] = SIGNAL_WEIGHTS["s2"]
            if fact.goal_links and self.goals is not None:
                for link in fact.goal_links:
                    goal = self.goals.get_goal(session_key, link.goal_id)
                    if goal is not None and any(
                            tok in response_tokens
                            for tok in _tokens(goal.title) if len(tok) >= 4):
                        signals["s3"] = SIGNAL_WEIGHTS["s3"]
                        break
            if profile.flags.get("use_signal_llm", False) \
                    and self.provider is not None:
                try:
                    answer = self.provider.complete(
                        "Did the response draw on this fact? answer YES or "
                        f"NO.\nfact: {fact.text}\nresponse: {agent_response}",
                        {"temperature": 0.0})
                    if answer.strip().upper().startswith("YES"):
                        signals["s4"] = SIGNAL_WEIGHTS["s4"]
                except Exception:
                    pass
            if response_vec is not None:
                fact_vec = self.store.vectors.get(FACT_COLLECTION, fact.id)
                if fact_vec is not None and cosine_similarity(
                        fact_vec, response_vec) >= S5_COSINE:
                    signals["s5"] = SIGNAL_WEIGHTS["s5"]

            jaccard = _jaccard(_tokens(fact.text), response_tokens)
            used = any(w >= 0.5 for w in signals.values()) \
                or jaccard > USE_JACCARD
            suppressed = False
            if used:
                context.ignored_counts.pop(fact.id, None)
                self.store.record_use(fact.id, True)
            elif signals:
                context.ignored_counts.pop(fact.id, None)
            else:
                count = context.ignored_counts.get(fact.id, 0) + 1
                context.ignored_counts[fact.id] = count
                if count >= IGNORED_TURNS:
                    self.store.record_use(fact.id, False)
                    suppressed = True
            report[fact.id] = {"signals": signals, "jaccard": jaccard,
                               "used": used, "suppressed": suppressed}
        self.store.flush_use_counts()

        if profile.flags.get("blocker_extraction", False) \
                and self.provider is not None and self.goals is not None:
            self._extract_blockers(session_key, agent_response)
        return report

    def _extract_blockers(self, session_key: str, response: str) -> None:
        try:
            answer = self.provider.complete(
                "List goal blockers mentioned below, one per line as "
                "`HINT: blocked|<goal id>|<blocker>`.\n" + response,
                {"temperature": 0.0})
        except Exception:
            return
        for line in answer.splitlines():
            line = line.strip()
            if not line.startswith("HINT:"):
                continue
            parts = [p.strip() for p in line[5:].split("|")]
            if len(parts) >= 2 and parts[0] == "blocked":
                self.goals.apply_hint(
                    GoalHint(goal_id=parts[1], kind="blocked",
                             payload=parts[2] if len(parts) > 2 else ""),
                    session_key)

    # subagents

    def subagent_spawn(self, session_key: str, child_goals: list,
                       budget: Optional[int] = None) -> dict:
        context = self._require(session_key)
        profile = context.resolved_profile
        if not profile.flags.get("subagent_enabled", True):
            raise ValueError("subagent context packets are disabled "
                             "for this profile")
        budget = budget or profile.budget_tokens
        titles = [getattr(g, "title", None) or g.get("title", "")
                  for g in child_goals]
        goal_vecs = self.embeddings.embed_batch(titles) if titles else []
        items = []
        parent_set = context.last_working_set
        for scored in (parent_set.items if parent_set else []):
            vec = scored.candidate.embedding or self.store.vectors.get(
                FACT_COLLECTION, scored.fact_id)
            if vec is None:
                continue
            if any(cosine_similarity(vec, gv) >= SUBAGENT_GOAL_COSINE
                   for gv in goal_vecs):
                items.append(scored)
        child_key = f"{session_key}::sub-{len(context.subagent_children) + 1}"
        context.subagent_children.append(child_key)
        self._subagents[child_key] = session_key
        self.store.ledger.emit("subagent_spawned", {
            "child": child_key, "items": len(items),
            "budget": budget * SUBAGENT_BUDGET_FACTOR,
        }, session_key=session_key, gateway_id=context.gateway_id)
        return {
            "child_session_key": child_key,
            "budget_tokens": budget * SUBAGENT_BUDGET_FACTOR,
            "isolation_scope": "SUBAGENT_INHERIT",
            "items": items,
            "goals": list(child_goals),
        }

    def subagent_end(self, child_session_key: str,
                     outcomes: Optional[dict[str, str]] = None) -> dict:
        parent_key = self._subagents.pop(child_session_key, None)
        if parent_key is None:
            self.store.ledger.emit("subagent_end_unknown", {
                "child": child_session_key,
            }, session_key=child_session_key,
                gateway_id=self.store.gateway_id)
            return {"merged_facts": 0, "known": False}
        context = self.sessions.get(parent_key)
        if context is not None and child_session_key \
                in context.subagent_children:
            context.subagent_children.remove(child_session_key)
        merged = 0
        rows = self.store.query_structural(
            {"session_key": child_session_key}, limit=1000)
        for fact, _ in rows:
            self.store.update_fact(fact.id, session_key=parent_key)
            merged += 1
        if outcomes and self.goals is not None:
            for goal_id, kind in outcomes.items():
                self.goals.apply_hint(GoalHint(goal_id=goal_id, kind=kind),
                                      parent_key)
        self.store.ledger.emit("subagent_ended", {
            "child": child_session_key, "merged_facts": merged,
        }, session_key=parent_key, gateway_id=self.store.gateway_id)
        return {"merged_facts": merged, "known": True}
