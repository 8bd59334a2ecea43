"""Idle-time memory maintenance.

Nine sequential stages per cycle: cluster near-duplicates, canonicalize,
strengthen used facts, decay unused ones, prune ineffective auto-recall,
promote recurring episodic knowledge, propose procedures from repeated step
patterns, flag verification gaps, and retune scoring weights. Cycles are
gateway-exclusive and cheap: seven of the nine stages never touch the
provider.
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
import uuid
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, Field

from .embeddings import EmbeddingService, EmbeddingVector, cosine_similarity
from .model import (
    DecayCadence,
    FactAssertion,
    MemoryClass,
    Scope,
    decay_cadence,
    now_ms,
    promotion_target,
)
from .store import FACT_COLLECTION, MemoryStore

logger = logging.getLogger(__name__)

CLUSTER_COSINE = 0.92
STRENGTHEN_BOOST = 0.3
DECAY_RECALLED = 0.9
DECAY_STALE = 0.95
ARCHIVE_THRESHOLD = 0.1
BLACKLIST_RECALLS = 5
PROMOTION_SESSIONS = 3
PATTERN_MIN_STEPS = 3
PATTERN_MIN_SESSIONS = 3
PATTERN_TOKEN_OVERLAP = 0.6
EMA_ALPHA = 0.2
TUNING_CLAMP = 0.05
LOCK_TIMEOUT_MS = 3_600_000
REPORT_RETENTION = 30

_MS_PER_DAY = 86_400_000
CADENCE_INTERVAL_MS = {
    DecayCadence.HOURLY: 3_600_000,
    DecayCadence.DAILY: _MS_PER_DAY,
    DecayCadence.WEEKLY: 7 * _MS_PER_DAY,
    DecayCadence.MONTHLY: 30 * _MS_PER_DAY,
}

# classes exempt from confidence mutation and archival
_NO_DECAY = {MemoryClass.POLICY, MemoryClass.PROCEDURAL}

TUNED_DIMENSIONS = ("confidence", "use_history", "recency")


class ConsolidationLockedError(RuntimeError):
    def __init__(self, gateway_id: str, holder: str):
        self.holder = holder
        super().__init__(
            f"consolidation already running for {gateway_id} (holder {holder})")


class StageResult(BaseModel, frozen=True):
    name: str
    count: int = 0
    detail: dict = Field(default_factory=dict)
    failed: bool = False
    error: str = ""


class TuningDelta(BaseModel, frozen=True):
    preset: str
    org_id: str
    gateway_id: str
    deltas: dict[str, float]
    updated_at: int


class ConsolidationReport(BaseModel, frozen=True):
    gateway_id: str
    cycle_id: str
    stage_results: tuple[StageResult, ...]
    provider_calls: int
    started_at: int
    ended_at: int

    def stage(self, name: str) -> StageResult:
        for result in self.stage_results:
            if result.name == name:
                return result
        raise KeyError(name)


# per-gateway lease shared across engine instances in this process
_LOCKS: dict[str, tuple[str, int]] = {}
_LOCKS_GUARD = threading.Lock()


def _acquire(gateway_id: str, holder: str, now: int) -> None:
    with _LOCKS_GUARD:
        held = _LOCKS.get(gateway_id)
        if held is not None and now - held[1] < LOCK_TIMEOUT_MS:
            raise ConsolidationLockedError(gateway_id, held[0])
        _LOCKS[gateway_id] = (holder, now)


def _release(gateway_id: str, holder: str) -> None:
    with _LOCKS_GUARD:
        if _LOCKS.get(gateway_id, ("",))[0] == holder:
            del _LOCKS[gateway_id]


def _tokens(text: str) -> set[str]:
    return {t for t in "".join(
        c.lower() if c.isalnum() else " " for c in text).split() if len(t) >= 4}


def _overlap(a: set[str], b: set[str]) -> float:
    if not a or not b:
        return 0.0
    return len(a & b) / len(a | b)


class ConsolidationEngine:
    """Runs maintenance cycles over one gateway's facts."""

    def __init__(
        self,
        store: MemoryStore,
        embeddings: EmbeddingService,
        provider=None,
        rule_store=None,
        procedures=None,
        audit_dir: Optional[str | Path] = None,
        preset: str = "coding",
        clock=now_ms,
    ):
        # preset names which profile's weights the retune stage adjusts
        self.preset = preset
        self.store = store
        self.embeddings = embeddings
        self.provider = provider
        self.rule_store = rule_store
        self.procedures = procedures
        self.audit_dir = Path(audit_dir) if audit_dir else None
        self.clock = clock
        self._provider_calls = 0

    # -- cycle --------------------------------------------------------------

    def run_cycle(self, gateway_id: str) -> ConsolidationReport:
        holder = str(uuid.uuid4())
        now = self.clock()
        _acquire(gateway_id, holder, now)
        try:
            return self._run_locked(gateway_id, holder, now)
        finally:
            _release(gateway_id, holder)

    def _run_locked(self, gateway_id, holder, started_at) -> ConsolidationReport:
        self._provider_calls = 0
        facts = self._gateway_facts(gateway_id)
        clusters: list[list[FactAssertion]] = []
        results: list[StageResult] = []

        def run(name, fn):
            try:
                results.append(fn())
            except Exception as exc:
                logger.warning("consolidation stage %s failed: %s", name, exc)
                results.append(StageResult(name=name, failed=True,
                                           error=str(exc)))

        initial_facts = facts
        run("cluster", lambda: self._stage_cluster(facts, clusters))
        run("canonicalize", lambda: self._stage_canonicalize(clusters))
        # canonicalize may archive merged duplicates; refresh the view
        facts = self._gateway_facts(gateway_id)
        run("strengthen", lambda: self._stage_strengthen(facts))
        run("decay", lambda: self._stage_decay(facts))
        run("prune", lambda: self._stage_prune(facts))
        run("promote", lambda: self._stage_promote(facts, clusters))
        # step patterns span sessions whose duplicates stage 2 just merged,
        # so pattern mining looks at the pre-merge view
        run("refine", lambda: self._stage_refine(initial_facts))
        run("gaps", lambda: self._stage_gaps(gateway_id))
        run("retune", lambda: self._stage_retune(gateway_id, facts))

        report = ConsolidationReport(
            gateway_id=gateway_id, cycle_id=holder,
            stage_results=tuple(results),
            provider_calls=self._provider_calls,
            started_at=started_at, ended_at=self.clock())
        self._persist_report(report)
        self.store.ledger.emit("consolidation_report", {
            "cycle_id": report.cycle_id,
            "provider_calls": report.provider_calls,
            "stages": {r.name: r.count for r in report.stage_results},
            "failures": [r.name for r in report.stage_results if r.failed],
        }, gateway_id=gateway_id)
        return report

    def _gateway_facts(self, gateway_id: str) -> list[FactAssertion]:
        return [f for f in self.store.all_facts()
                if not f.archived
                and (f.gateway_id or self.store.gateway_id) == gateway_id]

    def _complete(self, prompt: str) -> str:
        self._provider_calls += 1
        return self.provider.complete(prompt, {"temperature": 0.0,
                                               "max_tokens": 256})

    # -- stage 1: cluster ---------------------------------------------------

    def _stage_cluster(self, facts, clusters_out) -> StageResult:
        eligible = [f for f in facts if f.memory_class not in _NO_DECAY]
        vectors: dict[str, EmbeddingVector] = {}
        for fact in eligible:
            vec = self.store.vectors.get(FACT_COLLECTION, fact.id)
            if vec is not None:
                vectors[fact.id] = vec
        clusters: list[list[FactAssertion]] = []
        for fact in eligible:
            vec = vectors.get(fact.id)
            if vec is None:
                continue
            for cluster in clusters:
                anchor = vectors[cluster[0].id]
                if cosine_similarity(vec, anchor) >= CLUSTER_COSINE:
                    cluster.append(fact)
                    break
            else:
                clusters.append([fact])
        clusters_out.extend(clusters)
        multi = sum(1 for c in clusters if len(c) > 1)
        return StageResult(name="cluster", count=len(clusters),
                           detail={"multi_member": multi})

    # -- stage 2: canonicalize ----------------------------------------------

    def _stage_canonicalize(self, clusters) -> StageResult:
        merges = 0
        ambiguous = 0
        for cluster in clusters:
            if len(cluster) < 2:
                continue
            canonical, was_ambiguous = self._pick_canonical(cluster)
            ambiguous += was_ambiguous
            for member in cluster:
                if member.id != canonical.id:
                    self.store.update_fact(member.id, archived=True)
                    merges += 1
        return StageResult(name="canonicalize", count=merges,
                           detail={"ambiguous": ambiguous})

    def _pick_canonical(self, cluster) -> tuple[FactAssertion, int]:
        by_text: dict[str, list[FactAssertion]] = {}
        for member in cluster:
            by_text.setdefault(member.text, []).append(member)
        best_text, variants = max(by_text.items(), key=lambda kv: len(kv[1]))
        if len(variants) * 2 > len(cluster):
            return min(variants, key=lambda f: f.id), 0
        # no strict majority: ask the provider, fall back to longest text
        chosen_text = None
        if self.provider is not None:
            options = "\n".join(sorted(by_text))
            try:
                answer = self._complete(
                    "Pick the single best phrasing from the variants below "
                    "and repeat it exactly.\n" + options)
                for text in by_text:
                    if text in answer:
                        chosen_text = text
                        break
            except Exception as exc:
                logger.warning("canonicalize provider failed: %s", exc)
        if chosen_text is None:
            chosen_text = max(by_text, key=lambda t: (len(t), t))
        return min(by_text[chosen_text], key=lambda f: f.id), 1

    # -- stage 3: strengthen ------------------------------------------------

    def strengthen_fact(self, fact: FactAssertion) -> float:
        if fact.use_count == 0:
            return fact.confidence
        boost = (fact.successful_use_count / fact.use_count) * STRENGTHEN_BOOST
        return min(fact.confidence + boost, 1.0)

    def _stage_strengthen(self, facts) -> StageResult:
        changed = 0
        for fact in facts:
            if fact.memory_class in _NO_DECAY or fact.use_count == 0:
                continue
            new = self.strengthen_fact(fact)
            if new != fact.confidence:
                self.store.update_fact(fact.id, confidence=new)
                changed += 1
        return StageResult(name="strengthen", count=changed)

    # -- stage 4: decay -----------------------------------------------------

    def decay_fact(self, fact: FactAssertion, now: int) -> dict:
        """Confidence after decay. Returns {"confidence", "archived",
        "skipped"}; skipped when the scope's cadence window has not elapsed
        or the fact was actually used."""
        ref = fact.last_used_ts or fact.ingest_ts
        interval = CADENCE_INTERVAL_MS[decay_cadence(fact.scope)]
        if now - ref < interval:
            return {"confidence": fact.confidence, "archived": False,
                    "skipped": True}
        if fact.recall_count > 0 and fact.use_count == 0:
            conf = fact.confidence * DECAY_RECALLED ** fact.recall_count
        elif fact.recall_count == 0:
            days = (now - ref) // _MS_PER_DAY
            conf = fact.confidence * DECAY_STALE ** days
        else:
            # recalled and used: the strengthen stage owns this fact
            return {"confidence": fact.confidence, "archived": False,
                    "skipped": True}
        return {"confidence": conf, "archived": conf < ARCHIVE_THRESHOLD,
                "skipped": False}

    def _stage_decay(self, facts) -> StageResult:
        now = self.clock()
        decayed = 0
        archived = 0
        for fact in facts:
            if fact.memory_class in _NO_DECAY:
                continue
            outcome = self.decay_fact(fact, now)
            if outcome["skipped"]:
                continue
            changes = {"confidence": max(outcome["confidence"], 0.0)}
            if outcome["archived"]:
                changes["archived"] = True
                archived += 1
            if outcome["confidence"] != fact.confidence or outcome["archived"]:
                self.store.update_fact(fact.id, **changes)
                decayed += 1
        return StageResult(name="decay", count=decayed,
                           detail={"archived": archived})

    # -- stage 5: prune auto-recall -----------------------------------------

    def _stage_prune(self, facts) -> StageResult:
        pruned = 0
        for fact in facts:
            if fact.recall_count >= BLACKLIST_RECALLS \
                    and fact.successful_use_count == 0 \
                    and fact.id not in self.store.auto_recall_blacklist:
                self.store.blacklist_auto_recall(fact.id)
                pruned += 1
        return StageResult(name="prune", count=pruned)

    # -- stage 6: promote ---------------------------------------------------

    def promote_decision(self, fact: FactAssertion, sessions: int,
                         goal_linked: bool, use_count: int) -> str:
        """One of "class+scope", "class", "none"."""
        if fact.memory_class is not MemoryClass.EPISODIC:
            return "none"
        if sessions < PROMOTION_SESSIONS:
            return "none"
        if goal_linked or use_count >= 2:
            return "class+scope"
        # class-only at SESSION scope would make the fact durable but
        # invisible under strict isolation; force the scope along
        if fact.scope is Scope.SESSION:
            return "class+scope"
        return "class"

    def _recurrence(self, fact, clusters) -> int:
        for cluster in clusters:
            if any(m.id == fact.id for m in cluster):
                return len({m.session_key for m in cluster if m.session_key})
        return 1 if fact.session_key else 0

    def _stage_promote(self, facts, clusters) -> StageResult:
        promoted = 0
        for fact in facts:
            if fact.memory_class is not MemoryClass.EPISODIC or fact.archived:
                continue
            decision = self.promote_decision(
                fact, self._recurrence(fact, clusters),
                bool(fact.goal_links), fact.use_count)
            if decision == "none":
                continue
            changes: dict = {"memory_class": MemoryClass.SEMANTIC}
            # categories pinned to EPISODIC must move with the class
            if fact.category in {"event", "decision", "verification"}:
                changes["category"] = "general"
            if decision == "class+scope":
                target = promotion_target(fact.scope)
                if target is not None:
                    changes["scope"] = target
            self.store.update_fact(fact.id, **changes)
            promoted += 1
        return StageResult(name="promote", count=promoted)

    # -- stage 7: refine procedures -----------------------------------------

    def _step_like(self, fact: FactAssertion) -> bool:
        words = fact.text.split()
        if len(words) < 2:
            return False
        first = words[0].lower().strip(",:;")
        return first in {
            "run", "open", "check", "verify", "update", "deploy", "restart",
            "create", "delete", "review", "submit", "merge", "tag", "notify",
            "capture", "record", "export", "backup", "rotate", "apply"}

    def _stage_refine(self, facts) -> StageResult:
        steps = [f for f in facts if self._step_like(f)]
        groups: list[list[FactAssertion]] = []
        for fact in steps:
            toks = _tokens(fact.text)
            for group in groups:
                if _overlap(toks, _tokens(group[0].text)) \
                        >= PATTERN_TOKEN_OVERLAP:
                    group.append(fact)
                    break
            else:
                groups.append([fact])
        patterns = [
            g for g in groups
            if len(g) >= PATTERN_MIN_STEPS
            and len({f.session_key for f in g if f.session_key})
            >= PATTERN_MIN_SESSIONS]
        proposed = 0
        for pattern in patterns:
            name = None
            if self.provider is not None:
                try:
                    answer = self._complete(
                        "Name the recurring procedure made of these steps "
                        "in at most five words.\n"
                        + "\n".join(f.text for f in pattern[:5]))
                    name = " ".join(answer.split()[:5]) or None
                except Exception as exc:
                    logger.warning("refine provider failed: %s", exc)
            name = name or _tokens(pattern[0].text) and " ".join(
                sorted(_tokens(pattern[0].text))[:3]) or "recurring steps"
            self.store.ledger.emit("procedure_audit", {
                "event": "proposed_from_pattern",
                "name": name,
                "steps": [f.text for f in pattern],
                "sessions": sorted({f.session_key for f in pattern}),
            }, gateway_id=self.store.gateway_id)
            proposed += 1
        return StageResult(name="refine", count=proposed,
                           detail={"step_facts": len(steps)})

    # -- stage 8: verification gaps -----------------------------------------

    def _stage_gaps(self, gateway_id: str) -> StageResult:
        if self.procedures is None:
            return StageResult(name="gaps", count=0)
        gaps = []
        for execution in self.procedures.executions.values():
            if execution.status != "ACTIVE":
                continue
            for step_index, proof_type in \
                    self.procedures.outstanding_proofs(execution.id):
                gaps.append({"execution_id": execution.id,
                             "step": step_index, "proof_type": proof_type})
        for gap in gaps:
            self.store.ledger.emit("verification_gap", gap,
                                   gateway_id=gateway_id)
        return StageResult(name="gaps", count=len(gaps))

    # -- stage 9: retune ----------------------------------------------------

    def tune_weights(self, preset: str, org_id: str, gateway_id: str,
                     stats: dict[str, float], sessions: int
                     ) -> Optional[TuningDelta]:
        if sessions < 1 or self.rule_store is None:
            return None
        prior = self.rule_store.get_tuning_delta(preset, org_id, gateway_id) \
            or {}
        deltas: dict[str, float] = dict(prior)
        for dim, corr in stats.items():
            old = prior.get(dim, 0.0)
            target = old + EMA_ALPHA * (max(-1.0, min(1.0, corr)) - old)
            step = max(-TUNING_CLAMP, min(TUNING_CLAMP, target - old))
            deltas[dim] = old + step
        updated_at = self.clock()
        self.rule_store.set_tuning_delta(preset, org_id, gateway_id, deltas,
                                         updated_at)
        return TuningDelta(preset=preset, org_id=org_id,
                           gateway_id=gateway_id, deltas=deltas,
                           updated_at=updated_at)

    def _usage_stats(self, facts) -> dict[str, float]:
        used = [f for f in facts if f.successful_use_count > 0]
        ignored = [f for f in facts
                   if f.use_count > 0 and f.successful_use_count == 0]
        if not used or not ignored:
            return {}
        now = self.clock()

        def dims(fact):
            age_days = max(now - (fact.last_used_ts or fact.ingest_ts), 0) \
                / _MS_PER_DAY
            return {
                "confidence": fact.confidence,
                "use_history": min(fact.use_count / 10.0, 1.0),
                "recency": math.exp(-age_days / 7.0),
            }

        stats = {}
        for dim in TUNED_DIMENSIONS:
            mean_used = sum(dims(f)[dim] for f in used) / len(used)
            mean_ignored = sum(dims(f)[dim] for f in ignored) / len(ignored)
            stats[dim] = mean_used - mean_ignored
        return stats

    def _stage_retune(self, gateway_id, facts) -> StageResult:
        if self.rule_store is None:
            return StageResult(name="retune", count=0,
                               detail={"reason": "no rule store"})
        sessions = len([e for e in self.store.ledger.query(
            event_type="session_boundary")
            if e.gateway_id == gateway_id and e.payload.get("phase") == "end"])
        stats = self._usage_stats(facts)
        orgs = sorted({f.org_id or "" for f in facts}) or [""]
        tuned = 0
        for org in orgs:
            if self.tune_weights(self.preset, org, gateway_id, stats,
                                 sessions) is not None:
                tuned += 1
        return StageResult(name="retune", count=tuned,
                           detail={"sessions": sessions, "stats": stats})

    # -- report persistence -------------------------------------------------

    def _persist_report(self, report: ConsolidationReport) -> None:
        if self.audit_dir is None:
            return
        self.audit_dir.mkdir(parents=True, exist_ok=True)
        path = self.audit_dir / f"consolidation_{report.gateway_id}.jsonl"
        lines: list[str] = []
        if path.exists():
            lines = path.read_text().splitlines()
        lines.append(report.model_dump_json())
        lines = lines[-REPORT_RETENTION:]
        tmp = path.with_suffix(".jsonl.tmp")
        tmp.write_text("\n".join(lines) + "\n")
        os.replace(tmp, path)

    def reports(self, gateway_id: str) -> list[ConsolidationReport]:
        if self.audit_dir is None:
            return []
        path = self.audit_dir / f"consolidation_{gateway_id}.jsonl"
        if not path.exists():
            return []
        return [ConsolidationReport.model_validate_json(line)
                for line in path.read_text().splitlines() if line.strip()]
