"""Three ingest pipelines: conversation turns, tool artifacts, procedures.

The turn pipeline runs ten tasks in order: actor resolution, recent-fact
loading, provider extraction (goals ride along in the same prompt),
supersession handling, contradiction handling, memory-class resolution,
one batch embedding call, deduplicated storage, enrichment edges, and
goal-hint dispatch.

Provider responses use a line grammar so a deterministic stub provider can
drive tests:

    FACT: <category>|<text>|<conf>[|supersedes=R<i>][|contradicts=R<i>]
          [|goals=G<i>:<direct|indirect|none>,...]
    HINT: <kind>|<goal id>[|<note>]
    STEP: <instruction>[|proof=<type>[:optional]]
"""

from __future__ import annotations

import hashlib
import json
import uuid
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

from .goals import (
    TIER1_KINDS,
    TIER2_KINDS,
    GoalHint,
    GoalManager,
    GoalState,
)
from .model import (
    FactAssertion,
    GoalLink,
    Scope,
    TypedEdge,
    classify_memory_class,
    default_token_count,
    now_ms,
)
from .procedures import (
    PROOF_TYPES,
    ProcedureDefinition,
    ProcedureEngine,
    ProcedureStep,
    ProofRequirement,
)
from .profiles import ProfilePolicy
from .store import ARTIFACT_COLLECTION, MemoryStore

SUPERSESSION_DECAY = 0.6
PERSISTENT_GOAL_PROMPT_CAP = 5
RECENT_FACT_WINDOW = 10
SUMMARY_THRESHOLD_CHARS = 2000
SHORT_SUMMARY_CHARS = 400

EXTRACTION_PARAMS = {"temperature": 0.1, "max_tokens": 2048, "max_facts": 10}

# instruction phrasing -> proof type, applied when a step carries no
# explicit proof annotation
PROOF_PHRASES = (
    ("diff hash", "diff_hash"),
    ("diff", "diff_hash"),
    ("receipt", "receipt"),
    ("version record", "version_record"),
    ("sign-off", "supervisor_signoff"),
    ("signoff", "supervisor_signoff"),
    ("sign off", "supervisor_signoff"),
    ("log excerpt", "chunk_reference"),
    ("test output", "chunk_reference"),
    ("chunk", "chunk_reference"),
)


@dataclass(frozen=True)
class ExtractedFact:
    text: str
    category: str
    confidence: float
    supersedes_index: Optional[int] = None
    contradicts_index: Optional[int] = None
    goal_relevance: tuple[tuple[int, str], ...] = ()


@dataclass(frozen=True)
class ExtractionResult:
    facts: tuple[ExtractedFact, ...] = ()
    goal_hints: tuple[GoalHint, ...] = ()
    parse_errors: int = 0


@dataclass
class IngestReport:
    stored_ids: list[str] = field(default_factory=list)
    deduplicated: int = 0
    supersessions: int = 0
    contradictions: int = 0
    hints_dispatched: int = 0
    parse_errors: int = 0
    degraded: bool = False


def _template(name: str) -> str:
    return resources.files("cogmem.data").joinpath(name).read_text()


def parse_extraction(text: str, goal_ids: list[str]) -> ExtractionResult:
    facts = []
    hints = []
    errors = 0
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("FACT:"):
            parsed = _parse_fact_line(line[5:], goal_ids)
            if parsed is None:
                errors += 1
            else:
                facts.append(parsed)
        elif line.startswith("HINT:"):
            parts = [p.strip() for p in line[5:].split("|")]
            if len(parts) < 2 or not parts[1] \
                    or parts[0] not in TIER1_KINDS + TIER2_KINDS:
                errors += 1
                continue
            payload = parts[2] if len(parts) > 2 else ""
            try:
                hints.append(GoalHint(goal_id=parts[1], kind=parts[0],
                                      payload=payload))
            except Exception:
                errors += 1
    return ExtractionResult(facts=tuple(facts), goal_hints=tuple(hints),
                            parse_errors=errors)


def _parse_fact_line(body: str, goal_ids: list[str]
                     ) -> Optional[ExtractedFact]:
    parts = [p.strip() for p in body.split("|")]
    if len(parts) < 3:
        return None
    category, text = parts[0], parts[1]
    if not category or not text:
        return None
    try:
        confidence = min(max(float(parts[2]), 0.0), 1.0)
    except ValueError:
        return None
    supersedes = contradicts = None
    relevance = []
    for extra in parts[3:]:
        key, _, value = extra.partition("=")
        key = key.strip().lower()
        value = value.strip()
        try:
            if key == "supersedes":
                supersedes = int(value.lstrip("Rr"))
            elif key == "contradicts":
                contradicts = int(value.lstrip("Rr"))
            elif key == "goals":
                for item in value.split(","):
                    idx, _, strength = item.partition(":")
                    idx = int(idx.strip().lstrip("Gg"))
                    strength = strength.strip().lower()
                    if strength not in ("direct", "indirect", "none"):
                        return None
                    if not 0 <= idx < len(goal_ids):
                        return None
                    relevance.append((idx, strength))
        except ValueError:
            return None
    return ExtractedFact(text=text, category=category, confidence=confidence,
                         supersedes_index=supersedes,
                         contradicts_index=contradicts,
                         goal_relevance=tuple(relevance))


class IngestPipelines:
    def __init__(self, store: MemoryStore, embeddings, provider,
                 goals: Optional[GoalManager] = None,
                 procedures: Optional[ProcedureEngine] = None,
                 firewall=None,
                 supersession_decay: float = SUPERSESSION_DECAY,
                 persistent_goal_cap: int = PERSISTENT_GOAL_PROMPT_CAP):
        self.store = store
        self.embeddings = embeddings
        self.provider = provider
        self.goals = goals
        self.procedures = procedures
        self.firewall = firewall
        self.supersession_decay = supersession_decay
        self.persistent_goal_cap = persistent_goal_cap
        self._recent: dict[str, list[str]] = {}
        self._artifact_digests: set[str] = set()

    # conversation turns

    def ingest_turn(self, messages: list[dict], session_key: str,
                    profile: ProfilePolicy, actor: str = "",
                    persistent_goals: Optional[list[GoalState]] = None
                    ) -> IngestReport:
        report = IngestReport()
        # role tag and content on separate lines so directive lines in the
        # content stay at column zero for line-oriented providers
        text = "\n".join(f"[{m.get('role', 'user')}]\n{m.get('content', '')}"
                         for m in messages)
        about_actors = self._resolve_actors(text)
        recent = self._recent_facts(session_key)
        session_goals = (self.goals.session_goals(session_key)
                         if self.goals else [])
        persistent = list(persistent_goals or [])[:self.persistent_goal_cap]
        goal_rows = list(session_goals) + persistent
        goal_ids = [g.id for g in goal_rows]

        prompt = self._extraction_prompt(text, session_goals, persistent,
                                         recent, profile)
        params = dict(EXTRACTION_PARAMS)
        params.update({k[len("extraction_"):]: v
                       for k, v in profile.flags.items()
                       if k.startswith("extraction_")
                       and k != "extraction_focus"})
        try:
            response = self.provider.complete(prompt, params)
        except Exception as exc:
            self.store.ledger.emit("degraded_operation", {
                "component": "ingest", "op": "extract", "reason": str(exc),
            }, session_key=session_key, gateway_id=self.store.gateway_id)
            report.degraded = True
            self._emit_report(session_key, report)
            return report

        extraction = parse_extraction(response, goal_ids)
        report.parse_errors = extraction.parse_errors
        facts = extraction.facts[:int(params.get("max_facts", 10))]

        built = []
        for extracted in facts:
            memory_class = classify_memory_class(extracted.category,
                                                 llm=self.provider)
            links = tuple(GoalLink(goal_id=goal_ids[idx], strength=strength)
                          for idx, strength in extracted.goal_relevance
                          if strength != "none")
            built.append((extracted, FactAssertion(
                text=extracted.text, category=extracted.category,
                memory_class=memory_class, confidence=extracted.confidence,
                source_actor=actor, about_actors=tuple(about_actors),
                goal_links=links, session_key=session_key,
                gateway_id=self.store.gateway_id,
                scope=(Scope.GLOBAL if profile.isolation_scope == "GLOBAL"
                       else Scope.SESSION),
            )))

        vectors = (self.embeddings.embed_batch([f.text for _, f in built])
                   if built else [])
        for (extracted, fact), vector in zip(built, vectors):
            result = self.store.store_fact(
                fact, vector, dedup_threshold=profile.dedup_threshold)
            if result.status == "deduplicated":
                report.deduplicated += 1
                continue
            report.stored_ids.append(fact.id)
            self._recent.setdefault(session_key, []).append(fact.id)
            if extracted.supersedes_index is not None:
                if self._supersede(recent, extracted.supersedes_index,
                                   fact, session_key):
                    report.supersessions += 1
            if extracted.contradicts_index is not None:
                if self._contradict(recent, extracted.contradicts_index, fact):
                    report.contradictions += 1
        self._recent[session_key] = \
            self._recent.get(session_key, [])[-RECENT_FACT_WINDOW:]

        if self.goals is not None:
            for hint in extraction.goal_hints:
                self.goals.apply_hint(hint, session_key)
                report.hints_dispatched += 1
        self._emit_report(session_key, report)
        return report

    def _extraction_prompt(self, text, session_goals, persistent, recent,
                           profile):
        offset = len(session_goals)
        return _template("extraction_prompt.txt").format(
            focus=profile.flags.get("extraction_focus", "general"),
            session_goals="\n".join(
                f"G{i}: {g.title} [{g.status}]"
                for i, g in enumerate(session_goals)) or "(none)",
            persistent_goals="\n".join(
                f"G{offset + i}: {g.title}"
                for i, g in enumerate(persistent)) or "(none)",
            recent_facts="\n".join(
                f"R{i}: {f.text}" for i, f in enumerate(recent)) or "(none)",
            messages=text,
            max_facts=EXTRACTION_PARAMS["max_facts"],
        )

    def _recent_facts(self, session_key: str) -> list[FactAssertion]:
        ids = self._recent.get(session_key)
        if ids is not None:
            return [f for f in (self.store.get_fact(i) for i in ids)
                    if f is not None]
        rows = self.store.query_structural({"session_key": session_key},
                                           limit=RECENT_FACT_WINDOW)
        facts = [fact for fact, _ in rows]
        facts.reverse()  # oldest first so indexes are stable across turns
        self._recent[session_key] = [f.id for f in facts]
        return facts

    def _resolve_actors(self, text: str) -> list[str]:
        lowered = text.lower()
        matched = []
        for node_id in self.store.graph.nodes_by_label("Actor"):
            node = self.store.graph.get_node(node_id)
            props = node[1] if node else {}
            names = [props.get("display_name", "")]
            names.extend(props.get("platform_handles", {}).values()
                         if isinstance(props.get("platform_handles"), dict)
                         else props.get("platform_handles", []))
            if any(name and name.lower() in lowered for name in names):
                matched.append(node_id)
        return sorted(matched)

    def _supersede(self, recent, index, new_fact, session_key) -> bool:
        if not 0 <= index < len(recent):
            return False
        old = self.store.get_fact(recent[index].id)
        if old is None:
            return False
        self.store.update_fact(
            old.id, confidence=old.confidence * self.supersession_decay)
        self.store.graph.add_edge(TypedEdge(
            edge_type="supersession", from_id=old.id, to_id=new_fact.id,
            valid_from=new_fact.ingest_ts))
        return True

    def _contradict(self, recent, index, new_fact) -> bool:
        if not 0 <= index < len(recent):
            return False
        old = recent[index]
        if self.store.get_fact(old.id) is None:
            return False
        # conflict is recorded, both confidences stand
        self.store.graph.add_edge(TypedEdge(
            edge_type="contradiction", from_id=old.id, to_id=new_fact.id,
            valid_from=new_fact.ingest_ts))
        return True

    # tool artifacts

    def ingest_artifact(self, tool_name: str, args: dict, output: str,
                        session_key: str,
                        profile: Optional[ProfilePolicy] = None) -> dict:
        if self.firewall is not None:
            gate = self.firewall.ingest_gate(output, session_key=session_key)
            if not gate["clean"]:
                return {"status": "contaminated", "report": gate["report"]}
        canonical_args = json.dumps(args, sort_keys=True, default=str)
        digest = hashlib.sha256(
            f"{tool_name}\x00{canonical_args}\x00{output}".encode()
        ).hexdigest()
        if digest in self._artifact_digests:
            return {"status": "duplicate", "digest": digest}
        if self._persistent_digest_lookup(digest):
            self._artifact_digests.add(digest)
            return {"status": "duplicate", "digest": digest}
        self._artifact_digests.add(digest)

        summary = self._summarize(tool_name, output)
        artifact_id = f"artifact-{uuid.uuid4().hex[:12]}"
        props = {
            "id": artifact_id,
            "tool_name": tool_name,
            "digest": digest,
            "args_digest": hashlib.sha256(
                canonical_args.encode()).hexdigest(),
            "output_digest": hashlib.sha256(output.encode()).hexdigest(),
            "summary": summary,
            "full_length": len(output),
            "session_key": session_key,
            "token_count": default_token_count(summary),
            "injection_count": 0,
            "search_count": 0,
            "ingest_ts": now_ms(),
        }
        self.store.graph.put_node(artifact_id, "Artifact", props)
        self.store.vectors.upsert(ARTIFACT_COLLECTION, artifact_id,
                                  self.embeddings.embed_one(summary),
                                  {"session_key": session_key})
        self.store.ledger.emit("artifact_stored", {
            "artifact_id": artifact_id, "tool_name": tool_name,
            "full_length": len(output),
        }, session_key=session_key, gateway_id=self.store.gateway_id)
        return {"status": "stored", "artifact_id": artifact_id,
                "digest": digest, "summary": summary}

    def _persistent_digest_lookup(self, digest: str) -> bool:
        for node_id in self.store.graph.nodes_by_label("Artifact"):
            node = self.store.graph.get_node(node_id)
            if node and node[1].get("digest") == digest:
                return True
        return False

    def _summarize(self, tool_name: str, output: str) -> str:
        if len(output) <= SUMMARY_THRESHOLD_CHARS:
            return output[:SHORT_SUMMARY_CHARS]
        prompt = (f"Summarize this {tool_name} output in a few sentences:\n"
                  f"{output}")
        try:
            summary = self.provider.complete(prompt, {"temperature": 0.1})
            return summary.strip()[:SUMMARY_THRESHOLD_CHARS] \
                or output[:SHORT_SUMMARY_CHARS]
        except Exception:
            return output[:SHORT_SUMMARY_CHARS]

    # procedures

    def ingest_procedure(self, raw_text: str, session_key: str,
                         scope: str = "ACTOR") -> dict:
        if self.procedures is None:
            raise RuntimeError("procedure engine not configured")
        name = self._procedure_name(raw_text)
        prompt = _template("procedure_prompt.txt").format(raw_text=raw_text)
        response = self.provider.complete(prompt, {"temperature": 0.1})
        steps = []
        for line in response.splitlines():
            line = line.strip()
            if not line.startswith("STEP:"):
                continue
            step = self._parse_step(line[5:])
            if step is not None:
                steps.append(step)
        if not steps:
            self.store.ledger.emit("degraded_operation", {
                "component": "ingest", "op": "procedure_extract",
                "reason": "no steps parsed", "transcript": response[:2000],
            }, session_key=session_key, gateway_id=self.store.gateway_id)
            raise ValueError(f"no steps could be parsed for {name!r}")
        definition = ProcedureDefinition(name=name, scope=scope,
                                         steps=tuple(steps))
        return self.procedures.detect_version(definition)

    @staticmethod
    def _procedure_name(raw_text: str) -> str:
        for line in raw_text.splitlines():
            line = line.strip().lstrip("#").strip()
            if line and not line.startswith("STEP:"):
                return line
        return "untitled procedure"

    @staticmethod
    def _parse_step(body: str) -> Optional[ProcedureStep]:
        parts = [p.strip() for p in body.split("|")]
        instruction = parts[0]
        if not instruction:
            return None
        proofs = []
        for extra in parts[1:]:
            key, _, value = extra.partition("=")
            if key.strip().lower() != "proof":
                continue
            proof_type, _, flag = value.partition(":")
            proof_type = proof_type.strip()
            if proof_type not in PROOF_TYPES:
                return None
            proofs.append(ProofRequirement(
                proof_type=proof_type,
                mandatory=flag.strip().lower() != "optional"))
        if not proofs:
            inferred = _infer_proof(instruction)
            if inferred is not None:
                proofs.append(ProofRequirement(proof_type=inferred))
        return ProcedureStep(instruction=instruction, proofs=tuple(proofs))

    # plumbing

    def _emit_report(self, session_key: str, report: IngestReport) -> None:
        self.store.ledger.emit("ingest_report", {
            "stored": len(report.stored_ids),
            "deduplicated": report.deduplicated,
            "supersessions": report.supersessions,
            "contradictions": report.contradictions,
            "hints": report.hints_dispatched,
            "parse_errors": report.parse_errors,
            "degraded": report.degraded,
        }, session_key=session_key, gateway_id=self.store.gateway_id)


def _infer_proof(instruction: str) -> Optional[str]:
    lowered = instruction.lower()
    if "requires" not in lowered and "attach" not in lowered \
            and "capture" not in lowered:
        return None
    for phrase, proof_type in PROOF_PHRASES:
        if phrase in lowered:
            return proof_type
    return None

