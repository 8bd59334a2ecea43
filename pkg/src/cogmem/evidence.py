"""Claims, typed evidence, the verification state machine, and the
confidence multipliers it feeds into scoring.

State is a pure function of the attached evidence multiset (order of
attachment is irrelevant) except for REJECTED, which is terminal and set
explicitly with a mandatory reason and rejector.
"""

from __future__ import annotations

import uuid
from typing import Optional

from pydantic import BaseModel, Field

from .model import now_ms
from .store import MemoryStore
from .trace import TraceLedger

STATE_UNVERIFIED = "UNVERIFIED"
STATE_SELF = "SELF_SUPPORTED"
STATE_TOOL = "TOOL_SUPPORTED"
STATE_SUPERVISOR = "SUPERVISOR_VERIFIED"
STATE_REJECTED = "REJECTED"

EVIDENCE_TYPES = (
    "fact_reference",
    "tool_output",
    "supervisor_signoff",
    "diff_hash",
    "chunk_reference",
    "receipt",
    "version_record",
)

# Proof-style evidence counts at tool strength except chunk_reference,
# which is a pointer rather than external confirmation.
_TOOL_STRENGTH = frozenset({"tool_output", "receipt", "version_record", "diff_hash"})
_SELF_STRENGTH = frozenset({"fact_reference", "chunk_reference"})

MULTIPLIERS = {
    STATE_SUPERVISOR: 1.0,
    STATE_TOOL: 0.9,
    STATE_SELF: 0.7,
    STATE_UNVERIFIED: 0.5,
}
NO_CLAIMS_MULTIPLIER = 0.8

_STATE_RANK = {STATE_UNVERIFIED: 0, STATE_SELF: 1, STATE_TOOL: 2, STATE_SUPERVISOR: 3}


def derive_state(evidence_types) -> str:
    """Verification state for a multiset of evidence types."""
    types = set(evidence_types)
    unknown = types - set(EVIDENCE_TYPES)
    if unknown:
        raise ValueError(f"unknown evidence types: {sorted(unknown)}")
    if "supervisor_signoff" in types:
        return STATE_SUPERVISOR
    if types & _TOOL_STRENGTH:
        return STATE_TOOL
    if types & _SELF_STRENGTH:
        return STATE_SELF
    return STATE_UNVERIFIED


def state_meets(state: str, minimum: str) -> bool:
    if state == STATE_REJECTED:
        return False
    return _STATE_RANK[state] >= _STATE_RANK[minimum]


class ClaimRecord(BaseModel, frozen=True):
    id: str = Field(default_factory=lambda: str(uuid.uuid4()))
    fact_id: str = ""
    claim_text: str = ""
    state: str = STATE_UNVERIFIED
    rejection_reason: Optional[str] = None
    rejected_by: Optional[str] = None


class EvidenceRef(BaseModel, frozen=True):
    id: str = Field(default_factory=lambda: str(uuid.uuid4()))
    claim_id: str
    evidence_type: str
    ref_value: str = ""
    provided_by: str = ""
    ts: int = Field(default_factory=now_ms)


class EvidenceEngine:
    def __init__(self, store: MemoryStore, ledger: Optional[TraceLedger] = None):
        self.store = store
        self.ledger = ledger or store.ledger
        self.claims: dict[str, ClaimRecord] = {}
        self.evidence: dict[str, list[EvidenceRef]] = {}
        self._claims_by_fact: dict[str, list[str]] = {}

    def create_claim(self, fact_id: str, claim_text: str) -> ClaimRecord:
        claim = ClaimRecord(fact_id=fact_id, claim_text=claim_text)
        self.claims[claim.id] = claim
        self.evidence[claim.id] = []
        self._claims_by_fact.setdefault(fact_id, []).append(claim.id)
        self.store.graph.put_node(claim.id, "Claim", claim.model_dump(mode="json"))
        return claim

    def attach_evidence(
        self,
        claim_id: str,
        evidence_type: str,
        ref_value: str = "",
        provided_by: str = "",
    ) -> ClaimRecord:
        claim = self._require_claim(claim_id)
        ref = EvidenceRef(claim_id=claim_id, evidence_type=evidence_type,
                          ref_value=ref_value, provided_by=provided_by)
        self.evidence[claim_id].append(ref)
        self.store.graph.put_node(ref.id, "Evidence", ref.model_dump(mode="json"))
        if claim.state == STATE_REJECTED:
            return claim  # terminal; evidence recorded for audit only
        new_state = derive_state(e.evidence_type for e in self.evidence[claim_id])
        if new_state != claim.state:
            updated = claim.model_copy(update={"state": new_state})
            self.claims[claim_id] = updated
            self.store.graph.put_node(claim_id, "Claim", updated.model_dump(mode="json"))
            self.ledger.emit("claim_state_changed", {
                "claim_id": claim_id, "prior_state": claim.state,
                "new_state": new_state, "evidence_type": evidence_type,
            }, gateway_id=self.store.gateway_id)
            return updated
        return claim

    def reject_claim(self, claim_id: str, reason: str, rejector: str) -> ClaimRecord:
        if not reason:
            raise ValueError("rejection reason must be non-empty")
        claim = self._require_claim(claim_id)
        if claim.state == STATE_REJECTED:
            raise ValueError(f"claim {claim_id} already rejected")
        updated = claim.model_copy(update={
            "state": STATE_REJECTED, "rejection_reason": reason,
            "rejected_by": rejector,
        })
        self.claims[claim_id] = updated
        self.store.graph.put_node(claim_id, "Claim", updated.model_dump(mode="json"))
        self.ledger.emit("claim_rejected", {
            "claim_id": claim_id, "prior_state": claim.state,
            "reason": reason, "rejected_by": rejector,
        }, gateway_id=self.store.gateway_id)
        return updated

    def claims_for_fact(self, fact_id: str) -> list[ClaimRecord]:
        return [self.claims[cid] for cid in self._claims_by_fact.get(fact_id, [])]

    def evidence_for_claim(self, claim_id: str) -> list[EvidenceRef]:
        return list(self.evidence.get(claim_id, []))

    def evidence_count(self, fact_id: str) -> int:
        return sum(len(self.evidence.get(cid, []))
                   for cid in self._claims_by_fact.get(fact_id, []))

    def best_state(self, fact_id: str) -> Optional[str]:
        """Best claim state for a fact, excluding REJECTED claims; None when
        nothing remains."""
        states = [c.state for c in self.claims_for_fact(fact_id)
                  if c.state != STATE_REJECTED]
        if not states:
            return None
        return max(states, key=lambda s: _STATE_RANK[s])

    def confidence_multiplier(self, fact_id: str) -> float:
        best = self.best_state(fact_id)
        if best is None:
            return NO_CLAIMS_MULTIPLIER
        return MULTIPLIERS[best]

    def purge_fact(self, fact_id: str) -> int:
        """GDPR hook: remove a fact's claims and their evidence."""
        removed = 0
        for claim_id in self._claims_by_fact.pop(fact_id, []):
            for ref in self.evidence.pop(claim_id, []):
                self.store.graph.remove_node(ref.id)
                removed += 1
            self.claims.pop(claim_id, None)
            self.store.graph.remove_node(claim_id)
            removed += 1
        return removed

    def _require_claim(self, claim_id: str) -> ClaimRecord:
        claim = self.claims.get(claim_id)
        if claim is None:
            raise KeyError(f"unknown claim {claim_id}")
        return claim
