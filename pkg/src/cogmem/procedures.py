"""Versioned workflow templates with step tracking, guard bindings, and an
evidence-backed completion gate.

Activating a procedure does three things at once: steps become mandatory
context, guard bindings load into the safety rule registry, and an
execution record starts tracking step and proof progress. The execution can
only reach COMPLETED through the gate, which demands a matching claim at
SELF_SUPPORTED or better for every mandatory proof.
"""

from __future__ import annotations

import uuid
from typing import Optional, Protocol

from pydantic import BaseModel, Field, model_validator

from .evidence import EvidenceEngine, state_meets
from .model import TypedEdge, now_ms
from .store import MemoryStore

PROOF_TYPES = (
    "diff_hash",
    "chunk_reference",
    "receipt",
    "version_record",
    "supervisor_signoff",
)

ACTIVATION_MODES = (
    "manual",
    "actor_default",
    "trigger_word",
    "task_classifier",
    "goal_bound",
    "supervisor_forced",
)

# Working-set filtering defaults for procedure candidates.
RELEVANCE_THRESHOLD = 0.4
RELEVANCE_TOP_K = 3


class ProofRequirement(BaseModel, frozen=True):
    proof_type: str
    mandatory: bool = True

    @model_validator(mode="after")
    def _check(self):
        if self.proof_type not in PROOF_TYPES:
            raise ValueError(f"unknown proof type {self.proof_type!r}")
        return self


class ProcedureStep(BaseModel, frozen=True):
    instruction: str
    proofs: tuple[ProofRequirement, ...] = ()


class ProcedureDefinition(BaseModel, frozen=True):
    id: str = Field(default_factory=lambda: str(uuid.uuid4()))
    name: str
    version: int = 1
    scope: str = "ACTOR"
    steps: tuple[ProcedureStep, ...]
    activation_modes: tuple[str, ...] = ("manual",)
    trigger_words: tuple[str, ...] = ()
    guard_bindings: tuple[str, ...] = ()
    org_id: Optional[str] = None
    team_id: Optional[str] = None

    @model_validator(mode="after")
    def _check(self):
        if not self.steps:
            raise ValueError("a procedure needs at least one step")
        unknown = set(self.activation_modes) - set(ACTIVATION_MODES)
        if unknown:
            raise ValueError(f"unknown activation modes: {sorted(unknown)}")
        return self


class ProcedureExecution(BaseModel, frozen=True):
    id: str = Field(default_factory=lambda: str(uuid.uuid4()))
    procedure_id: str
    session_key: str
    completed_steps: frozenset[int] = frozenset()
    submitted_proofs: dict[int, tuple[str, ...]] = Field(default_factory=dict)
    started_at: int = Field(default_factory=now_ms)
    status: str = "ACTIVE"


class GateResult(BaseModel, frozen=True):
    complete: bool
    missing: tuple[tuple[int, str], ...] = ()


class GuardBindingRegistry(Protocol):
    def load_procedure_bindings(self, procedure_id: str,
                                bindings: tuple[str, ...]) -> None: ...
    def unload_procedure_bindings(self, procedure_id: str) -> None: ...


class ProcedureEngine:
    def __init__(self, store: MemoryStore, evidence: EvidenceEngine,
                 guard_registry: Optional[GuardBindingRegistry] = None):
        self.store = store
        self.evidence = evidence
        self.guard_registry = guard_registry
        self.definitions: dict[str, ProcedureDefinition] = {}
        self.executions: dict[str, ProcedureExecution] = {}

    # definitions

    def detect_version(self, new_def: ProcedureDefinition) -> dict:
        """Register a definition; a (name, scope) match supersedes the
        previous version."""
        prior = None
        for d in self.definitions.values():
            if d.name == new_def.name and d.scope == new_def.scope:
                if prior is None or d.version > prior.version:
                    prior = d
        if prior is not None:
            new_def = new_def.model_copy(update={"version": prior.version + 1})
        self.definitions[new_def.id] = new_def
        self.store.graph.put_node(new_def.id, "Procedure",
                                  new_def.model_dump(mode="json"))
        self._audit(new_def.id, "qualified", {"version": new_def.version})
        if prior is not None:
            self.store.graph.add_edge(TypedEdge(
                edge_type="supersession", from_id=prior.id, to_id=new_def.id))
            return {"status": "superseded", "superseded": prior.id,
                    "definition": new_def}
        return {"status": "created", "definition": new_def}

    def get_definition(self, procedure_id: str) -> Optional[ProcedureDefinition]:
        return self.definitions.get(procedure_id)

    # execution lifecycle

    def activate(self, procedure_id: str, session_key: str,
                 mode: str = "manual") -> ProcedureExecution:
        definition = self.definitions.get(procedure_id)
        if definition is None:
            raise KeyError(f"unknown procedure {procedure_id}")
        if mode != "supervisor_forced" and mode not in definition.activation_modes:
            raise ValueError(
                f"activation mode {mode!r} not declared for {definition.name!r}")
        existing = self._active_execution(procedure_id, session_key)
        if existing is not None:
            return existing
        execution = ProcedureExecution(procedure_id=procedure_id,
                                       session_key=session_key)
        self.executions[execution.id] = execution
        if self.guard_registry is not None and definition.guard_bindings:
            self.guard_registry.load_procedure_bindings(
                procedure_id, definition.guard_bindings)
        self._audit(procedure_id, "activated", {
            "execution_id": execution.id, "mode": mode,
            "bindings_loaded": len(definition.guard_bindings),
        }, session_key)
        return execution

    def complete_step(self, execution_id: str, step_index: int,
                      proof_claims: Optional[list[str]] = None
                      ) -> ProcedureExecution:
        execution = self._require_active(execution_id)
        definition = self.definitions[execution.procedure_id]
        if not 0 <= step_index < len(definition.steps):
            raise IndexError(f"step {step_index} out of range")
        proofs = dict(execution.submitted_proofs)
        merged = set(proofs.get(step_index, ()))
        for claim_id in proof_claims or []:
            if claim_id not in merged:
                merged.add(claim_id)
                self._audit(execution.procedure_id, "proof_submitted", {
                    "execution_id": execution_id, "step": step_index,
                    "claim_id": claim_id,
                }, execution.session_key)
        proofs[step_index] = tuple(sorted(merged))
        updated = execution.model_copy(update={
            "completed_steps": execution.completed_steps | {step_index},
            "submitted_proofs": proofs,
        })
        self.executions[execution_id] = updated
        self._audit(execution.procedure_id, "step_completed", {
            "execution_id": execution_id, "step": step_index,
        }, execution.session_key)
        return updated

    def completion_gate(self, execution_id: str) -> GateResult:
        execution = self._require_active(execution_id)
        definition = self.definitions[execution.procedure_id]
        missing = []
        for index, step in enumerate(definition.steps):
            claim_ids = execution.submitted_proofs.get(index, ())
            for requirement in step.proofs:
                if not requirement.mandatory:
                    continue
                if not any(self._satisfies(cid, requirement.proof_type)
                           for cid in claim_ids):
                    missing.append((index, requirement.proof_type))
        if missing:
            return GateResult(complete=False, missing=tuple(missing))
        updated = execution.model_copy(update={"status": "COMPLETED"})
        self.executions[execution_id] = updated
        if self.guard_registry is not None:
            self.guard_registry.unload_procedure_bindings(execution.procedure_id)
        all_proofs = {str(k): list(v)
                      for k, v in execution.submitted_proofs.items()}
        self._audit(execution.procedure_id, "completed", {
            "execution_id": execution_id, "proofs": all_proofs,
        }, execution.session_key)
        return GateResult(complete=True)

    def abandon(self, execution_id: str, reason: str = "") -> ProcedureExecution:
        execution = self._require_active(execution_id)
        updated = execution.model_copy(update={"status": "ABANDONED"})
        self.executions[execution_id] = updated
        # Bindings come down on abandonment as well, so a walked-away
        # workflow does not leave stale constraints active.
        if self.guard_registry is not None:
            self.guard_registry.unload_procedure_bindings(execution.procedure_id)
        self._audit(execution.procedure_id, "abandoned", {
            "execution_id": execution_id, "reason": reason,
        }, execution.session_key)
        return updated

    def active_executions(self, session_key: str) -> list[ProcedureExecution]:
        return [e for e in self.executions.values()
                if e.session_key == session_key and e.status == "ACTIVE"]

    def outstanding_proofs(self, execution_id: str) -> list[tuple[int, str]]:
        execution = self.executions[execution_id]
        definition = self.definitions[execution.procedure_id]
        out = []
        for index, step in enumerate(definition.steps):
            claim_ids = execution.submitted_proofs.get(index, ())
            for requirement in step.proofs:
                if requirement.mandatory and not any(
                        self._satisfies(cid, requirement.proof_type)
                        for cid in claim_ids):
                    out.append((index, requirement.proof_type))
        return out

    def requires_proof(self, execution_id: str) -> bool:
        """True while any mandatory proof is outstanding; such executions
        carry the mandatory-injection flag in working-set assembly."""
        return bool(self.outstanding_proofs(execution_id))

    # plumbing

    def _satisfies(self, claim_id: str, proof_type: str) -> bool:
        claim = self.evidence.claims.get(claim_id)
        if claim is None or not state_meets(claim.state, "SELF_SUPPORTED"):
            return False
        types = {ref.evidence_type
                 for ref in self.evidence.evidence_for_claim(claim_id)}
        return proof_type in types

    def _active_execution(self, procedure_id, session_key):
        for e in self.executions.values():
            if e.procedure_id == procedure_id \
                    and e.session_key == session_key and e.status == "ACTIVE":
                return e
        return None

    def _require_active(self, execution_id: str) -> ProcedureExecution:
        execution = self.executions.get(execution_id)
        if execution is None:
            raise KeyError(f"unknown execution {execution_id}")
        if execution.status != "ACTIVE":
            raise ValueError(f"execution {execution_id} is {execution.status}")
        return execution

    def _audit(self, procedure_id: str, event: str, payload: dict,
               session_key: str = "") -> None:
        self.store.ledger.emit("procedure_audit", {
            "procedure_id": procedure_id, "event": event, **payload,
        }, session_key=session_key, gateway_id=self.store.gateway_id)
