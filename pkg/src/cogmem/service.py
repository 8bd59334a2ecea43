"""HTTP surface of the runtime.

One process can serve many gateways; every request names its gateway in the
X-Gateway-Id header and is routed to that gateway's container. Requests
without the header are rejected. The inbound traceparent is bound to a
contextvar so every trace event emitted while handling the request carries
it.
"""

# No postponed annotations here: route models are closure-local classes and
# string annotations would be unresolvable for the framework.
import uuid
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .goals import TIER1_KINDS, TIER2_KINDS, GoalHint
from .guard import GuardRule
from .model import ActorRef, FactAssertion, classify_memory_class, now_ms
from .profiles import check_authority, resolve_policy
from .runtime import TIER_FULL, Runtime
from .store import ARTIFACT_COLLECTION, IsolationPolicy
from .trace import current_traceparent

IDENTITY_HEADERS = ("x-gateway-id", "x-agent-id", "x-session-key",
                    "x-actor-id", "x-org-id", "x-team-id")

_OPEN_PATHS = ("/openapi.json", "/docs", "/redoc", "/dashboard", "/healthz")


class Identity(BaseModel, frozen=True):
    gateway_id: str
    agent_id: str = ""
    session_key: str = ""
    actor_id: str = ""
    org_id: Optional[str] = None
    team_id: Optional[str] = None


class PendingApproval(BaseModel):
    id: str = Field(default_factory=lambda: str(uuid.uuid4()))
    session_key: str
    action_digest: str
    verdict: str
    required_rule: str = ""
    tool_name: str = ""
    args: dict = Field(default_factory=dict)
    claim_id: str = ""
    requested_at: int = Field(default_factory=now_ms)
    status: str = "pending"
    decided_by: str = ""


def _identity(request: Request) -> Identity:
    h = request.headers
    return Identity(
        gateway_id=h.get("x-gateway-id", ""),
        agent_id=h.get("x-agent-id", ""),
        session_key=h.get("x-session-key", ""),
        actor_id=h.get("x-actor-id", ""),
        org_id=h.get("x-org-id") or None,
        team_id=h.get("x-team-id") or None,
    )


def _load_actor(runtime: Runtime, actor_id: str) -> Optional[ActorRef]:
    if not actor_id:
        return None
    node = runtime.store.graph.get_node(actor_id)
    if node is None or node[0] != "Actor":
        return None
    props = node[1]
    fields = {k: props[k] for k in ActorRef.model_fields if k in props}
    fields["id"] = actor_id
    return ActorRef(**fields)


def _require_authority(runtime: Runtime, identity: Identity, action: str,
                       target_org: Optional[str] = None,
                       target_team: Optional[str] = None) -> ActorRef:
    actor = _load_actor(runtime, identity.actor_id)
    if actor is None:
        # unregistered callers carry no authority at all
        actor = ActorRef(id=identity.actor_id or "anonymous",
                         authority_level=0,
                         org_id=identity.org_id, team_id=identity.team_id)
    decision = check_authority(actor, action, target_org=target_org,
                               target_team=target_team)
    if not decision.allowed:
        raise HTTPException(
            status_code=403,
            detail={"rule_id": decision.rule_id, "reason": decision.reason})
    return actor


def _profile(runtime: Runtime, identity: Identity, preset: str):
    override = runtime.rule_store.get_override(identity.org_id, preset)
    delta = runtime.rule_store.get_tuning_delta(
        preset, identity.org_id or "", runtime.gateway_id)
    return resolve_policy(preset, org_override=override, tuning_delta=delta)


def _isolation(profile) -> IsolationPolicy:
    return IsolationPolicy(level=profile.isolation_level,
                           scope=profile.isolation_scope)


def create_app(runtime: Optional[Runtime] = None,
               directory: Optional[str | Path] = None,
               provider=None,
               dashboard_dir: Optional[str | Path] = None) -> FastAPI:
    app = FastAPI(title="cogmem runtime", version="0.1.0")
    app.state.runtimes = {}
    app.state.approvals = {}  # gateway -> {approval_id: PendingApproval}
    app.state.directory = Path(directory) if directory else None
    app.state.provider = provider
    if runtime is not None:
        app.state.runtimes[runtime.gateway_id] = runtime

    def get_runtime(identity: Identity) -> Runtime:
        rt = app.state.runtimes.get(identity.gateway_id)
        if rt is None:
            base = app.state.directory
            rt = Runtime(
                identity.gateway_id, tier=TIER_FULL,
                provider=app.state.provider,
                directory=base / identity.gateway_id if base else None)
            app.state.runtimes[identity.gateway_id] = rt
        return rt

    def approvals_for(gateway_id: str) -> dict:
        return app.state.approvals.setdefault(gateway_id, {})

    @app.middleware("http")
    async def identity_middleware(request: Request, call_next):
        path = request.url.path
        if not path.startswith(_OPEN_PATHS) and not request.headers.get(
                "x-gateway-id"):
            return JSONResponse(
                status_code=400,
                content={"detail": "X-Gateway-Id header is required"})
        token = current_traceparent.set(request.headers.get("traceparent"))
        try:
            return await call_next(request)
        finally:
            current_traceparent.reset(token)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    # -- memory tools -------------------------------------------------------

    class SearchBody(BaseModel):
        query: str
        profile: str = "coding"
        limit: int = 10

    @app.post("/memory/search")
    def memory_search(body: SearchBody, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        profile = _profile(rt, identity, body.profile)
        candidates = rt.retriever.retrieve(
            body.query, profile.retrieval, _isolation(profile),
            session_key=identity.session_key, actor=identity.actor_id)
        return {"candidates": [
            {"fact_id": c.fact_id, "text": c.text,
             "score": c.weighted_score, "sources": sorted(c.source_set)}
            for c in candidates[:body.limit]]}

    @app.get("/memory/{fact_id}")
    def memory_get(fact_id: str, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        fact = rt.store.get_fact(fact_id)
        if fact is None:
            raise HTTPException(status_code=404, detail="fact not found")
        return fact.model_dump(mode="json")

    @app.get("/memory/{fact_id}/evidence")
    def memory_evidence(fact_id: str, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        claims = rt.evidence.claims_for_fact(fact_id)
        return {
            "fact_id": fact_id,
            "best_state": rt.evidence.best_state(fact_id),
            "confidence_multiplier": rt.evidence.confidence_multiplier(
                fact_id),
            "claims": [{
                **c.model_dump(mode="json"),
                "evidence": [e.model_dump(mode="json")
                             for e in rt.evidence.evidence_for_claim(c.id)],
            } for c in claims],
        }

    class StoreBody(BaseModel):
        text: str
        category: str = "general"
        confidence: float = 0.7
        scope: str = "SESSION"
        goal_links: list[dict] = Field(default_factory=list)

    @app.post("/memory", status_code=201)
    def memory_store(body: StoreBody, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        fact = FactAssertion(
            text=body.text, category=body.category,
            memory_class=classify_memory_class(body.category, rt.provider),
            confidence=body.confidence, scope=body.scope,
            goal_links=tuple(body.goal_links),
            session_key=identity.session_key,
            source_actor=identity.actor_id,
            gateway_id=identity.gateway_id,
            org_id=identity.org_id, team_id=identity.team_id)
        result = rt.store.store_fact(fact, rt.embeddings.embed_one(body.text))
        return {"status": result.status, "fact_id": result.fact_id}

    @app.delete("/memory/{fact_id}")
    def memory_forget(fact_id: str, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        report = rt.store.forget(fact_id)
        return {"existed": report.existed,
                "edges_removed": report.edges_removed}

    class UpdateBody(BaseModel):
        confidence: Optional[float] = None
        archived: Optional[bool] = None
        category: Optional[str] = None

    @app.patch("/memory/{fact_id}")
    def memory_update(fact_id: str, body: UpdateBody, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        changes = {k: v for k, v in body.model_dump().items()
                   if v is not None}
        if "category" in changes:
            changes["memory_class"] = classify_memory_class(
                changes["category"], rt.provider)
        updated = rt.store.update_fact(fact_id, **changes)
        if updated is None:
            raise HTTPException(status_code=404, detail="fact not found")
        return updated.model_dump(mode="json")

    # -- goal tools ---------------------------------------------------------

    @app.get("/goals")
    def goals_list(request: Request, session_key: str = ""):
        identity = _identity(request)
        rt = get_runtime(identity)
        key = session_key or identity.session_key
        session = [g.model_dump(mode="json")
                   for g in rt.goals.session_goals(key)] if key else []
        persistent = [g.model_dump(mode="json")
                      for g in rt.goals.query_visible_goals(
                          org=identity.org_id, team=identity.team_id,
                          actor=identity.actor_id)]
        return {"session_goals": session, "persistent_goals": persistent}

    class GoalBody(BaseModel):
        title: str
        description: str = ""
        persistent: bool = False
        scope: str = "ACTOR"

    @app.post("/goals", status_code=201)
    def goals_create(body: GoalBody, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        if body.persistent:
            goal = rt.goals.create_persistent_goal(
                body.title, scope=body.scope, org_id=identity.org_id,
                team_id=identity.team_id, owner_actor=identity.actor_id)
        else:
            if not identity.session_key:
                raise HTTPException(status_code=422,
                                    detail="X-Session-Key required for "
                                           "session goals")
            goal = rt.goals.create_session_goal(
                identity.session_key, body.title,
                description=body.description)
        return goal.model_dump(mode="json")

    class HintBody(BaseModel):
        kind: str
        note: str = ""

    def _hint(rt, identity, goal_id, kind, note):
        if kind not in TIER1_KINDS + TIER2_KINDS:
            raise HTTPException(status_code=422,
                                detail=f"unknown hint kind {kind!r}")
        goal = rt.goals.apply_hint(
            GoalHint(goal_id=goal_id, kind=kind, payload=note),
            identity.session_key)
        if goal is None:
            raise HTTPException(status_code=404, detail="goal not found")
        return goal.model_dump(mode="json")

    @app.post("/goals/{goal_id}/status")
    def goals_status(goal_id: str, body: HintBody, request: Request):
        identity = _identity(request)
        return _hint(get_runtime(identity), identity, goal_id, body.kind,
                     body.note)

    class NoteBody(BaseModel):
        note: str

    @app.post("/goals/{goal_id}/blockers")
    def goals_blocker(goal_id: str, body: NoteBody, request: Request):
        identity = _identity(request)
        return _hint(get_runtime(identity), identity, goal_id, "blocked",
                     body.note)

    @app.post("/goals/{goal_id}/progress")
    def goals_progress(goal_id: str, body: NoteBody, request: Request):
        identity = _identity(request)
        return _hint(get_runtime(identity), identity, goal_id, "progressed",
                     body.note)

    # -- procedure tools ----------------------------------------------------

    class ProcedureBody(BaseModel):
        transcript: str
        scope: str = "ACTOR"

    @app.post("/procedures", status_code=201)
    def procedures_create(body: ProcedureBody, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        try:
            result = rt.ingest.ingest_procedure(
                body.transcript, identity.session_key, scope=body.scope)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        definition = result["definition"]
        return {"procedure_id": definition.id, "name": definition.name,
                "version": definition.version,
                "steps": len(definition.steps)}

    @app.post("/procedures/{procedure_id}/activate")
    def procedures_activate(procedure_id: str, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        if rt.procedures.get_definition(procedure_id) is None:
            raise HTTPException(status_code=404,
                                detail="procedure not found")
        execution = rt.procedures.activate(procedure_id,
                                           identity.session_key)
        return {"execution_id": execution.id, "status": execution.status}

    class StepBody(BaseModel):
        proof_claims: list[str] = Field(default_factory=list)

    @app.post("/procedures/executions/{execution_id}/steps/{step_index}"
              "/complete")
    def procedures_complete_step(execution_id: str, step_index: int,
                                 body: StepBody, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        try:
            execution = rt.procedures.complete_step(
                execution_id, step_index, proof_claims=body.proof_claims)
        except KeyError:
            raise HTTPException(status_code=404,
                                detail="execution not found")
        except IndexError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        gate = rt.procedures.completion_gate(execution_id)
        return {"completed_steps": sorted(execution.completed_steps),
                "complete": gate.complete,
                "missing": [{"step": s, "proof_type": p}
                            for s, p in gate.missing]}

    @app.get("/procedures/status")
    def procedures_status(request: Request, session_key: str = ""):
        identity = _identity(request)
        rt = get_runtime(identity)
        key = session_key or identity.session_key
        out = []
        for execution in rt.procedures.active_executions(key):
            definition = rt.procedures.get_definition(execution.procedure_id)
            out.append({
                "execution_id": execution.id,
                "procedure_id": execution.procedure_id,
                "name": definition.name if definition else "",
                "completed_steps": sorted(execution.completed_steps),
                "outstanding_proofs": [
                    {"step": s, "proof_type": p}
                    for s, p in rt.procedures.outstanding_proofs(
                        execution.id)],
            })
        return {"executions": out}

    # -- artifact tools -----------------------------------------------------

    class ArtifactBody(BaseModel):
        tool_name: str
        args: dict = Field(default_factory=dict)
        output: str

    @app.post("/artifacts", status_code=201)
    def artifacts_create(body: ArtifactBody, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        return rt.ingest.ingest_artifact(body.tool_name, body.args,
                                         body.output, identity.session_key)

    class ArtifactSearchBody(BaseModel):
        query: str
        limit: int = 5

    @app.post("/artifacts/search")
    def artifacts_search(body: ArtifactSearchBody, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        vec = rt.embeddings.embed_one(body.query)
        hits = rt.store.vectors.top_k(ARTIFACT_COLLECTION, vec, body.limit)
        out = []
        for artifact_id, score, _payload in hits:
            node = rt.store.graph.get_node(artifact_id)
            if node is None:
                continue
            props = node[1]
            out.append({"artifact_id": artifact_id, "score": score,
                        "tool_name": props.get("tool_name", ""),
                        "summary": props.get("summary", "")})
        return {"artifacts": out}

    # -- guard tools --------------------------------------------------------

    @app.get("/guard/rules")
    def guard_rules(request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        return {"generation": rt.guard.registry.generation,
                "rules": [r.model_dump(mode="json")
                          for r in rt.guard.registry.rules.values()]}

    class GuardRuleBody(BaseModel):
        pattern: str
        pattern_kind: str = "keyword"
        severity_on_match: str = "warn"
        scope_org: Optional[str] = None

    @app.post("/guard/rules", status_code=201)
    def guard_rules_add(body: GuardRuleBody, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        actor = _require_authority(rt, identity, "manage_guard_rules",
                                   target_org=identity.org_id)
        try:
            rule = GuardRule(source="custom", scope_gateway=rt.gateway_id,
                             **body.model_dump(exclude_none=True))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        rule_id = rt.guard.register_rule(rule, actor)
        return {"rule_id": rule_id,
                "generation": rt.guard.registry.generation}

    @app.get("/guard/status")
    def guard_status(request: Request, profile: str = "coding",
                     session_key: str = ""):
        identity = _identity(request)
        rt = get_runtime(identity)
        key = session_key or identity.session_key
        resolved = _profile(rt, identity, profile)
        return {"strictness": rt.guard.session_strictness(key, resolved),
                "generation": rt.guard.registry.generation,
                "rule_count": rt.guard.registry.rule_count()}

    # -- firewall -----------------------------------------------------------

    class FirewallBody(BaseModel):
        tool_name: str
        args: dict = Field(default_factory=dict)
        profile: str = "coding"

    @app.post("/firewall/check")
    def firewall_check(body: FirewallBody, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        profile = _profile(rt, identity, body.profile)
        decision = rt.firewall.intercept_tool_call(
            body.tool_name, body.args, identity.session_key, profile)
        response = {"allow": decision.allow, "cached": decision.cached,
                    "reason": decision.reason,
                    "verdict": decision.verdict.result
                    if decision.verdict else "pass"}
        if decision.verdict and decision.verdict.result == "require_approval":
            queue = approvals_for(identity.gateway_id)
            digest = decision.verdict.action_digest
            existing = next(
                (a for a in queue.values()
                 if a.action_digest == digest and a.status == "pending"),
                None)
            if existing is None:
                rule_id = decision.verdict.triggered_constraints[0][0] \
                    if decision.verdict.triggered_constraints else ""
                approval = PendingApproval(
                    session_key=identity.session_key,
                    action_digest=digest,
                    verdict=decision.verdict.result,
                    required_rule=rule_id,
                    tool_name=body.tool_name, args=body.args,
                    claim_id=str(body.args.get("claim_id", "")))
                queue[approval.id] = approval
                rt.ledger.emit("approval_requested", {
                    "approval_id": approval.id, "digest": digest,
                    "tool_name": body.tool_name,
                }, session_key=identity.session_key,
                    gateway_id=identity.gateway_id)
                existing = approval
            response["approval_id"] = existing.id
        return response

    class ScanBody(BaseModel):
        text: str
        direction: str = "input"

    @app.post("/firewall/scan")
    def firewall_scan(body: ScanBody, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        report = rt.firewall.safety_scan(body.text, direction=body.direction,
                                         session_key=identity.session_key)
        return {"flagged": report.flagged, "tier": report.tier,
                "category": report.category,
                "confidence": report.confidence}

    # -- approvals ----------------------------------------------------------

    @app.get("/approvals")
    def approvals_list(request: Request, status: str = "pending"):
        identity = _identity(request)
        queue = approvals_for(identity.gateway_id)
        rows = [a.model_dump(mode="json") for a in queue.values()
                if not status or a.status == status]
        rows.sort(key=lambda a: a["requested_at"])
        return {"approvals": rows}

    class DecisionBody(BaseModel):
        decision: str  # approved | rejected

    @app.post("/approvals/{approval_id}/decide")
    def approval_decide(approval_id: str, body: DecisionBody,
                        request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        queue = approvals_for(identity.gateway_id)
        approval = queue.get(approval_id)
        if approval is None:
            raise HTTPException(status_code=404,
                                detail="approval not found")
        if approval.status != "pending":
            raise HTTPException(status_code=409,
                                detail=f"already {approval.status}")
        if body.decision not in ("approved", "rejected"):
            raise HTTPException(status_code=422,
                                detail="decision must be approved or "
                                       "rejected")
        supervisor = _require_authority(rt, identity,
                                        "approve_guard_verdict",
                                        target_org=identity.org_id)
        approval.status = body.decision
        approval.decided_by = supervisor.id
        evidence_ref = None
        if body.decision == "approved":
            rt.guard.grant_approval(approval.action_digest, supervisor.id)
            if approval.claim_id:
                try:
                    claim = rt.evidence.attach_evidence(
                        approval.claim_id, "supervisor_signoff",
                        f"approval:{approval.id}")
                    evidence_ref = {"claim_id": claim.id,
                                    "state": claim.state}
                except KeyError:
                    evidence_ref = None
        rt.ledger.emit("approval_decided", {
            "approval_id": approval.id, "decision": body.decision,
            "decided_by": supervisor.id, "digest": approval.action_digest,
        }, session_key=approval.session_key,
            gateway_id=identity.gateway_id)
        out = approval.model_dump(mode="json")
        out["evidence"] = evidence_ref
        return out

    # -- lifecycle ----------------------------------------------------------

    class BootstrapBody(BaseModel):
        session_key: str
        profile: str = "coding"
        agent_key: str = ""

    @app.post("/sessions/bootstrap")
    def sessions_bootstrap(body: BootstrapBody, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        try:
            context = rt.lifecycle.bootstrap({
                "gateway_id": identity.gateway_id,
                "session_key": body.session_key,
                "profile": body.profile,
                "agent_key": body.agent_key or identity.agent_id,
                "actor": identity.actor_id,
                "org_id": identity.org_id,
                "team_id": identity.team_id,
            })
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {"session_key": context.session_key,
                "session_id": context.session_id,
                "profile": context.resolved_profile.name,
                "budget_tokens": context.resolved_profile.budget_tokens}

    class IngestTurnBody(BaseModel):
        messages: list[dict]
        profile: str = "coding"

    @app.post("/sessions/{session_key}/ingest")
    def sessions_ingest(session_key: str, body: IngestTurnBody,
                        request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        profile = _profile(rt, identity, body.profile)
        report = rt.ingest.ingest_turn(body.messages, session_key, profile,
                                       actor=identity.actor_id)
        return {"stored_ids": report.stored_ids,
                "deduplicated": report.deduplicated,
                "supersessions": report.supersessions,
                "contradictions": report.contradictions,
                "hints_dispatched": report.hints_dispatched,
                "parse_errors": report.parse_errors,
                "degraded": report.degraded}

    class AssembleBody(BaseModel):
        turn_text: str
        conversation: Optional[list[dict]] = None

    @app.post("/sessions/{session_key}/assemble")
    def sessions_assemble(session_key: str, body: AssembleBody,
                          request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        try:
            out = rt.lifecycle.assemble(session_key, body.turn_text,
                                        body.conversation)
        except KeyError:
            raise HTTPException(status_code=404,
                                detail="session not bootstrapped")
        return {
            "block1": out.surface_a_block1,
            "block2": out.surface_b_block2,
            "block3": [{"fact_id": s.fact_id,
                        "text": s.candidate.text,
                        "score": s.final_score}
                       for s in out.surface_b_block3],
            "block4": out.surface_b_block4,
            "replaced_tool_outputs": out.replaced_tool_outputs,
            "conversation": out.conversation,
            "guard_result": out.guard_result,
            "degraded": out.degraded,
        }

    class CompactBody(BaseModel):
        conversation: list[dict]

    @app.post("/sessions/{session_key}/compact")
    def sessions_compact(session_key: str, body: CompactBody,
                         request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        try:
            return rt.lifecycle.compact(session_key, body.conversation)
        except KeyError:
            raise HTTPException(status_code=404,
                                detail="session not bootstrapped")

    class AfterTurnBody(BaseModel):
        injected_ids: list[str] = Field(default_factory=list)
        agent_response: str = ""
        tools_invoked: list[str] = Field(default_factory=list)

    @app.post("/sessions/{session_key}/after-turn")
    def sessions_after_turn(session_key: str, body: AfterTurnBody,
                            request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        try:
            report = rt.lifecycle.after_turn(
                session_key, body.injected_ids, body.agent_response,
                tools_invoked=tuple(body.tools_invoked))
        except KeyError:
            raise HTTPException(status_code=404,
                                detail="session not bootstrapped")
        return {"items": report}

    @app.post("/sessions/{session_key}/end")
    def sessions_end(session_key: str, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        rt.lifecycle.session_end(session_key)
        return {"ended": session_key}

    class SpawnBody(BaseModel):
        goals: list[dict]
        budget: Optional[int] = None

    @app.post("/sessions/{session_key}/subagents")
    def subagent_spawn(session_key: str, body: SpawnBody, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        try:
            packet = rt.lifecycle.subagent_spawn(session_key, body.goals,
                                                 budget=body.budget)
        except KeyError:
            raise HTTPException(status_code=404,
                                detail="session not bootstrapped")
        except ValueError as exc:
            raise HTTPException(status_code=403, detail=str(exc))
        return {
            "child_session_key": packet["child_session_key"],
            "budget_tokens": packet["budget_tokens"],
            "isolation_scope": packet["isolation_scope"],
            "items": [{"fact_id": s.fact_id, "text": s.candidate.text}
                      for s in packet["items"]],
            "goals": packet["goals"],
        }

    class SubagentEndBody(BaseModel):
        outcomes: dict[str, str] = Field(default_factory=dict)

    @app.post("/subagents/{child_key:path}/end")
    def subagent_end(child_key: str, body: SubagentEndBody,
                     request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        return rt.lifecycle.subagent_end(child_key,
                                         outcomes=body.outcomes or None)

    # -- traces -------------------------------------------------------------

    @app.get("/traces")
    def traces(request: Request, session_key: Optional[str] = None,
               event_type: Optional[str] = None,
               actor_id: Optional[str] = None,
               since: Optional[int] = None, until: Optional[int] = None):
        identity = _identity(request)
        rt = get_runtime(identity)
        events = rt.ledger.query(
            session_key=session_key, gateway_id=identity.gateway_id,
            event_type=event_type, actor_id=actor_id, since=since,
            until=until)
        return {"events": [e.model_dump(mode="json") for e in events]}

    @app.get("/traces/summary")
    def traces_summary(request: Request, session_key: Optional[str] = None,
                       event_type: Optional[str] = None,
                       since: Optional[int] = None,
                       until: Optional[int] = None):
        identity = _identity(request)
        rt = get_runtime(identity)
        return rt.ledger.session_summary(
            session_key=session_key, gateway_id=identity.gateway_id,
            event_type=event_type, since=since, until=until)

    # -- consolidation ------------------------------------------------------

    @app.post("/consolidation/run")
    def consolidation_run(request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        report = rt.consolidation.run_cycle(identity.gateway_id)
        return report.model_dump(mode="json")

    # -- profiles -----------------------------------------------------------

    @app.get("/profiles/{preset}")
    def profile_get(preset: str, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        try:
            resolved = _profile(rt, identity, preset)
        except Exception as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return resolved.model_dump(mode="json")

    # -- admin tools --------------------------------------------------------

    class OrgBody(BaseModel):
        org_id: str
        name: str = ""

    @app.post("/admin/orgs", status_code=201)
    def admin_org(body: OrgBody, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        _require_authority(rt, identity, "manage_org",
                           target_org=body.org_id)
        rt.store.graph.put_node(body.org_id, "Organization",
                                {"id": body.org_id, "name": body.name})
        return {"org_id": body.org_id}

    class TeamBody(BaseModel):
        team_id: str
        org_id: str
        name: str = ""

    @app.post("/admin/teams", status_code=201)
    def admin_team(body: TeamBody, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        _require_authority(rt, identity, "manage_org",
                           target_org=body.org_id)
        rt.store.graph.put_node(body.team_id, "Team",
                                {"id": body.team_id, "org_id": body.org_id,
                                 "name": body.name})
        return {"team_id": body.team_id}

    class ActorBody(BaseModel):
        actor_id: str
        actor_type: str = "human_operator"
        display_name: str = ""
        platform_handles: list[str] = Field(default_factory=list)
        authority_level: int = 0
        org_id: Optional[str] = None
        team_id: Optional[str] = None

    def _has_human_actors(rt: Runtime) -> bool:
        for node_id in rt.store.graph.nodes_by_label("Actor"):
            node = rt.store.graph.get_node(node_id)
            if node and str(node[1].get("actor_type", "")).startswith("human"):
                return True
        return False

    @app.post("/admin/actors", status_code=201)
    def admin_actor(body: ActorBody, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        # first human registration bootstraps the gateway; after that the
        # caller needs register_actor authority
        if _has_human_actors(rt):
            _require_authority(rt, identity, "register_actor",
                               target_org=body.org_id)
        actor = ActorRef(id=body.actor_id, actor_type=body.actor_type,
                         display_name=body.display_name,
                         platform_handles=tuple(body.platform_handles),
                         authority_level=body.authority_level,
                         org_id=body.org_id, team_id=body.team_id)
        rt.store.graph.put_node(actor.id, "Actor",
                                actor.model_dump(mode="json"))
        return {"actor_id": actor.id}

    class MemberBody(BaseModel):
        actor_id: str
        team_id: str
        org_id: Optional[str] = None

    @app.post("/admin/members")
    def admin_member(body: MemberBody, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        _require_authority(rt, identity, "manage_team_members",
                           target_org=body.org_id or identity.org_id,
                           target_team=body.team_id)
        actor = _load_actor(rt, body.actor_id)
        if actor is None:
            raise HTTPException(status_code=404, detail="actor not found")
        updated = actor.model_copy(update={
            "team_id": body.team_id,
            "org_id": body.org_id or actor.org_id})
        rt.store.graph.put_node(updated.id, "Actor",
                                updated.model_dump(mode="json"))
        return {"actor_id": updated.id, "team_id": updated.team_id}

    class OverrideBody(BaseModel):
        org_id: str
        preset: str
        override: dict

    @app.put("/admin/profile-overrides")
    def admin_override(body: OverrideBody, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        _require_authority(rt, identity, "set_profile_override",
                           target_org=body.org_id)
        rt.rule_store.set_override(body.org_id, body.preset, body.override)
        return {"org_id": body.org_id, "preset": body.preset}

    class MergeBody(BaseModel):
        source_id: str
        target_id: str

    @app.post("/admin/actors/merge")
    def admin_merge(body: MergeBody, request: Request):
        identity = _identity(request)
        rt = get_runtime(identity)
        _require_authority(rt, identity, "merge_actors",
                           target_org=identity.org_id)
        source = _load_actor(rt, body.source_id)
        target = _load_actor(rt, body.target_id)
        if source is None or target is None:
            raise HTTPException(status_code=404, detail="actor not found")
        moved = 0
        for fact in rt.store.all_facts():
            if fact.source_actor == source.id:
                rt.store.update_fact(fact.id, source_actor=target.id)
                moved += 1
        merged = target.model_copy(update={
            "platform_handles": tuple(dict.fromkeys(
                target.platform_handles + source.platform_handles))})
        rt.store.graph.put_node(merged.id, "Actor",
                                merged.model_dump(mode="json"))
        deactivated = source.model_copy(update={"active": False})
        rt.store.graph.put_node(deactivated.id, "Actor",
                                deactivated.model_dump(mode="json"))
        return {"target_id": target.id, "facts_reattributed": moved,
                "source_deactivated": True}

    # -- dashboard ----------------------------------------------------------

    static_dir = Path(dashboard_dir) if dashboard_dir else \
        Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if static_dir.is_dir():
        app.mount("/dashboard",
                  StaticFiles(directory=static_dir, html=True),
                  name="dashboard")

    return app
