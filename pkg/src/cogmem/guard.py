"""Six-layer cheap-first action safety pipeline.

Layer 0 classifies the action into an autonomy domain and derives the
oversight floor from the active profile. Layers 1 and 2 match the merged
rule registry statically and semantically. Layer 3 runs structural checks
(approval tokens, evidence, confirmation flags). Layer 4 always collects
triggered constraints for mandatory reinjection. Layer 5 asks the model
about ambiguous cases, but only where strictness warrants the cost.
Safety can only escalate the autonomy floor, never relax it.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import uuid
from importlib import resources
from typing import Optional

from pydantic import BaseModel, Field, model_validator

from .embeddings import EmbeddingService, EmbeddingVector, cosine_similarity
from .model import ActorRef
from .profiles import AUTONOMY_DOMAINS, ProfilePolicy, check_authority
from .providers import LanguageModelProvider
from .store import Bm25Index, MemoryStore

RULE_SOURCES = ("builtin", "profile", "procedure_binding", "custom")
PATTERN_KINDS = ("keyword", "phrase", "regex", "tool_target")

VERDICTS = ("pass", "warn", "require_evidence", "require_approval", "block")
SEVERITY = {v: i for i, v in enumerate(VERDICTS)}

AUTONOMY_TO_VERDICT = {
    "AUTONOMOUS": "pass",
    "INFORM": "warn",
    "APPROVE_FIRST": "require_approval",
    "HARD_STOP": "block",
}

BM25_BLOCK_THRESHOLD = 8.0
BM25_WARN_THRESHOLD = 5.0
COSINE_THRESHOLD = 0.80
STRICTNESS_MODIFIER = {"loose": 1.5, "medium": 1.0, "strict": 0.7}

NEAR_MISS_WINDOW = 5
NEAR_MISS_WARNS = 3

_TIGHTER = {"loose": "medium", "medium": "strict", "strict": "strict"}

_DOMAIN_KEYWORDS: dict[str, list[str]] = json.loads(
    resources.files("cogmem.data").joinpath("domain_keywords.json").read_text())

BUILTIN_RULES = [
    ("phrase", "delete production database", "block"),
    ("regex", r"(?i)drop\s+table", "block"),
    ("regex", r"(?i)rm\s+-rf\s+/", "block"),
    ("phrase", "disable all backups", "block"),
    ("keyword", "exfiltrate", "block"),
    ("phrase", "bypass the approval", "warn"),
]


class GuardRule(BaseModel, frozen=True):
    id: str = Field(default_factory=lambda: str(uuid.uuid4()))
    source: str = "custom"
    pattern_kind: str = "keyword"
    pattern: str
    severity_on_match: str = "warn"
    scope_gateway: Optional[str] = None
    scope_org: Optional[str] = None

    @model_validator(mode="after")
    def _check(self):
        if self.source not in RULE_SOURCES:
            raise ValueError(f"unknown rule source {self.source!r}")
        if self.pattern_kind not in PATTERN_KINDS:
            raise ValueError(f"unknown pattern kind {self.pattern_kind!r}")
        if self.severity_on_match not in VERDICTS:
            raise ValueError(f"unknown severity {self.severity_on_match!r}")
        if self.pattern_kind == "regex":
            try:
                re.compile(self.pattern)
            except re.error as exc:
                raise ValueError(f"bad regex pattern: {exc}") from exc
        return self

    def matches(self, text: str, tool_name: str = "") -> bool:
        lowered = text.lower()
        if self.pattern_kind == "keyword":
            return bool(re.search(
                r"\b" + re.escape(self.pattern.lower()) + r"\b", lowered))
        if self.pattern_kind == "phrase":
            return self.pattern.lower() in lowered
        if self.pattern_kind == "regex":
            return re.search(self.pattern, text) is not None
        return bool(tool_name) and tool_name == self.pattern


class GuardVerdict(BaseModel, frozen=True):
    result: str
    triggered_constraints: tuple[tuple[str, str], ...] = ()  # (rule id, text)
    layer_provenance: tuple[str, ...] = ()
    autonomy_domain: str = "UNCATEGORIZED"
    autonomy_floor: str = "AUTONOMOUS"
    strictness: str = "medium"
    reinjection_items: tuple[str, ...] = ()
    action_digest: str = ""


class GuardRegistry:
    """Merged four-source rule set. Procedure bindings load and unload with
    their procedure; every mutation bumps the generation counter so verdict
    caches can invalidate."""

    def __init__(self, embeddings: Optional[EmbeddingService] = None):
        self._lock = threading.Lock()
        self.embeddings = embeddings
        self.rules: dict[str, GuardRule] = {}
        self._procedure_rules: dict[str, list[str]] = {}
        self._bm25 = Bm25Index()
        self._exemplars: dict[str, EmbeddingVector] = {}
        self.generation = 0
        for kind, pattern, severity in BUILTIN_RULES:
            self._add(GuardRule(source="builtin", pattern_kind=kind,
                                pattern=pattern, severity_on_match=severity))

    def _add(self, rule: GuardRule) -> None:
        with self._lock:
            self.rules[rule.id] = rule
            self._bm25.add(rule.id, rule.pattern)
            if self.embeddings is not None and rule.pattern_kind != "regex":
                self._exemplars[rule.id] = self.embeddings.embed_one(rule.pattern)
            self.generation += 1

    def _remove(self, rule_id: str) -> None:
        with self._lock:
            if self.rules.pop(rule_id, None) is not None:
                self._bm25.remove(rule_id)
                self._exemplars.pop(rule_id, None)
                self.generation += 1

    def add_rule(self, rule: GuardRule) -> str:
        self._add(rule)
        return rule.id

    def remove_rule(self, rule_id: str) -> None:
        self._remove(rule_id)

    def load_procedure_bindings(self, procedure_id: str,
                                bindings: tuple[str, ...]) -> None:
        ids = []
        for binding in bindings:
            rule = GuardRule(source="procedure_binding", pattern_kind="phrase",
                             pattern=binding, severity_on_match="block")
            self._add(rule)
            ids.append(rule.id)
        self._procedure_rules[procedure_id] = ids

    def unload_procedure_bindings(self, procedure_id: str) -> None:
        for rule_id in self._procedure_rules.pop(procedure_id, []):
            self._remove(rule_id)

    def rule_count(self) -> int:
        return len(self.rules)

    def match_all(self, text: str, tool_name: str = "") -> list[GuardRule]:
        with self._lock:
            rules = list(self.rules.values())
        return [r for r in rules if r.matches(text, tool_name)]

    def bm25_best(self, text: str) -> tuple[Optional[str], float]:
        hits = self._bm25.search(text, 1)
        return hits[0] if hits else (None, 0.0)

    def cosine_best(self, vector: EmbeddingVector) -> tuple[Optional[str], float]:
        best_id, best = None, 0.0
        with self._lock:
            exemplars = dict(self._exemplars)
        for rule_id, exemplar in exemplars.items():
            sim = cosine_similarity(vector, exemplar)
            if sim > best:
                best_id, best = rule_id, sim
        return best_id, best


def action_digest(description: str, tool_name: str = "",
                  args: Optional[dict] = None) -> str:
    blob = json.dumps({"d": description, "t": tool_name, "a": args or {}},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def classify_domain(text: str,
                    provider: Optional[LanguageModelProvider] = None) -> str:
    lowered = text.lower()
    counts = {}
    for domain, keywords in _DOMAIN_KEYWORDS.items():
        hits = sum(1 for kw in keywords
                   if re.search(r"\b" + re.escape(kw) + r"\b", lowered))
        if hits:
            counts[domain] = hits
    if counts:
        best = max(counts.values())
        for domain in _DOMAIN_KEYWORDS:  # declaration order breaks ties
            if counts.get(domain) == best:
                return domain
    if provider is not None:
        try:
            answer = provider.complete(
                "Classify the action into one autonomy domain "
                f"({', '.join(AUTONOMY_DOMAINS)}).\nAction: {text}\n"
                "Answer with the domain name only.", {})
            token = answer.strip().split()[0].upper() if answer.strip() else ""
            if token in AUTONOMY_DOMAINS:
                return token
        except Exception:
            pass
    return "UNCATEGORIZED"


class GuardEngine:
    def __init__(
        self,
        store: MemoryStore,
        registry: GuardRegistry,
        embeddings: Optional[EmbeddingService] = None,
        provider: Optional[LanguageModelProvider] = None,
    ):
        self.store = store
        self.registry = registry
        self.embeddings = embeddings
        self.provider = provider
        self.approvals: dict[str, dict] = {}
        self._outcomes: dict[str, list[str]] = {}
        self._strictness_override: dict[str, str] = {}
        self._lock = threading.Lock()

    # strictness

    def session_strictness(self, session_key: str,
                           profile: ProfilePolicy) -> str:
        return self._strictness_override.get(session_key,
                                             profile.guard_strictness)

    # evaluation

    def evaluate(self, action: dict, session_key: str,
                 profile: ProfilePolicy) -> GuardVerdict:
        description = action.get("description", "")
        tool_name = action.get("tool_name", "")
        strictness = self.session_strictness(session_key, profile)
        modifier = STRICTNESS_MODIFIER[strictness]
        digest = action_digest(description, tool_name, action.get("args"))
        layers: list[str] = []
        triggered: list[tuple[str, str]] = []
        safety = "pass"

        # L0: autonomy domain and floor
        domain = classify_domain(
            f"{description} {tool_name}".strip(), self.provider)
        floor = profile.autonomy_matrix.get(domain, "AUTONOMOUS")
        layers.append(f"L0:{domain}:{floor}")

        # L1: static rule matching
        l1 = "pass"
        for rule in self.registry.match_all(description, tool_name):
            triggered.append((rule.id, rule.pattern))
            l1 = _worse(l1, rule.severity_on_match)
        safety = _worse(safety, l1)
        layers.append(f"L1:{l1}")

        # L2: semantic matching against exemplars
        l2 = "pass"
        rule_id, bm25 = self.registry.bm25_best(description)
        if bm25 >= BM25_BLOCK_THRESHOLD * modifier:
            l2 = "block"
        elif bm25 >= BM25_WARN_THRESHOLD * modifier:
            l2 = "warn"
        if rule_id is not None and l2 != "pass":
            triggered.append((rule_id, self.registry.rules[rule_id].pattern))
        if self.embeddings is not None and l2 != "block":
            vec = self.embeddings.embed_one(description)
            cos_rule, cos = self.registry.cosine_best(vec)
            if cos >= min(COSINE_THRESHOLD * modifier, 0.999):
                l2 = _worse(l2, "warn")
                if cos_rule is not None:
                    triggered.append((cos_rule,
                                      self.registry.rules[cos_rule].pattern))
        safety = _worse(safety, l2)
        layers.append(f"L2:{l2}")

        # L3: structural validation, skipped under loose
        approved = False
        l3 = "pass"
        if strictness != "loose":
            claim_id = action.get("claim_id")
            if claim_id is not None and not self._claim_supported(claim_id):
                l3 = "require_evidence"
            if action.get("requires_confirmation") and not action.get("confirmed"):
                l3 = _worse(l3, "require_approval")
            approved = digest in self.approvals
            safety = _worse(safety, l3)
            layers.append(f"L3:{l3}")
        else:
            layers.append("L3:skipped")

        # L5: model escalation for the ambiguous remainder
        all_prior_non_pass = "pass" not in (l1, l2, l3)
        if strictness == "strict" or (strictness == "medium"
                                      and all_prior_non_pass):
            l5 = self._llm_escalation(description)
            safety = _worse(safety, l5)
            layers.append(f"L5:{l5}")

        # Floor composition. A recorded approval satisfies APPROVE_FIRST;
        # HARD_STOP cannot be approved away.
        effective_floor = floor
        if approved and floor == "APPROVE_FIRST":
            effective_floor = "AUTONOMOUS"
        final = _worse(AUTONOMY_TO_VERDICT[effective_floor], safety)

        # L4: every triggered constraint is reinjected, even on pass.
        seen = set()
        unique = []
        for rid, text in triggered:
            if rid not in seen:
                seen.add(rid)
                unique.append((rid, text))
        verdict = GuardVerdict(
            result=final,
            triggered_constraints=tuple(unique),
            layer_provenance=tuple(layers) + ("L4:reinjection",),
            autonomy_domain=domain,
            autonomy_floor=floor,
            strictness=strictness,
            reinjection_items=tuple(text for _, text in unique),
            action_digest=digest,
        )
        self.store.ledger.emit("guard_verdict", {
            "digest": digest, "result": final, "domain": domain,
            "layers": list(verdict.layer_provenance),
            "rules": [rid for rid, _ in unique],
            "strictness": strictness,
        }, session_key=session_key, gateway_id=self.store.gateway_id)
        return verdict

    def record_outcome(self, session_key: str, verdict: GuardVerdict,
                       profile: ProfilePolicy) -> str:
        with self._lock:
            outcomes = self._outcomes.setdefault(session_key, [])
            outcomes.append(verdict.result)
            window = outcomes[-NEAR_MISS_WINDOW:]
            current = self.session_strictness(session_key, profile)
            if window.count("warn") >= NEAR_MISS_WARNS:
                tightened = _TIGHTER[current]
                if tightened != current:
                    self._strictness_override[session_key] = tightened
                    self.store.ledger.emit("strictness_tightened", {
                        "from": current, "to": tightened,
                        "warns_in_window": window.count("warn"),
                    }, session_key=session_key,
                        gateway_id=self.store.gateway_id)
                    return tightened
            return current

    def register_rule(self, rule: GuardRule, actor: ActorRef,
                      rules: Optional[dict] = None) -> str:
        decision = check_authority(actor, "manage_guard_rules",
                                   target_org=rule.scope_org or actor.org_id,
                                   rules=rules)
        if not decision.allowed:
            raise PermissionError(
                f"guard rule registration denied by {decision.rule_id}: "
                f"{decision.reason}")
        return self.registry.add_rule(rule)

    def grant_approval(self, digest: str, approver: str) -> None:
        self.approvals[digest] = {"approved_by": approver}

    # plumbing

    def _claim_supported(self, claim_id: str) -> bool:
        node = self.store.graph.get_node(claim_id)
        if node is None or node[0] != "Claim":
            return False
        state = node[1].get("state", "UNVERIFIED")
        return state in ("SELF_SUPPORTED", "TOOL_SUPPORTED",
                         "SUPERVISOR_VERIFIED")

    def _llm_escalation(self, description: str) -> str:
        if self.provider is None:
            return "pass"
        try:
            answer = self.provider.complete(
                "You are a safety reviewer. Answer BLOCK, WARN, or PASS "
                f"for this agent action:\n{description}", {})
        except Exception:
            self.store.ledger.emit("degraded_operation", {
                "op": "guard_llm_escalation"},
                gateway_id=self.store.gateway_id)
            return "pass"
        token = answer.strip().split()[0].strip(".,:").upper() \
            if answer.strip() else ""
        if token == "BLOCK":
            return "block"
        if token == "WARN":
            return "warn"
        return "pass"


def _worse(a: str, b: str) -> str:
    return a if SEVERITY[a] >= SEVERITY[b] else b
