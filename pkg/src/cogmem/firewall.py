"""Physical enforcement for tool calls plus cost-tiered content scanning.

The advisory safety pipeline only tells the agent what it should not do.
This module sits at the tool boundary and makes the verdict stick: a
blocked call never reaches the tool body. Verdicts are cached by
(tool, canonical args, strictness) with a short TTL; any rule-registry
mutation invalidates the whole cache through the generation counter.

Scanning runs six tiers in cost order. Tiers 0 (regex corpus), 1 (cheap
heuristics), and 5 (canary tokens) ship here; 2 through 4 are plugin
points that default to no-ops.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
import uuid
from dataclasses import dataclass, replace
from importlib import resources
from typing import Callable, Optional

from .guard import GuardEngine, GuardVerdict
from .profiles import ProfilePolicy

log = logging.getLogger(__name__)

SCAN_CATEGORIES = (
    "prompt_injection",
    "jailbreak",
    "exfiltration",
    "pii",
    "toxicity",
    "canary_leak",
)

# A tier that flags at or above this confidence ends the scan early.
SHORT_CIRCUIT_CONFIDENCE = 0.9

CACHE_TTL_MS = 5 * 60 * 1000

ALL_TIERS = (0, 1, 2, 3, 4, 5)


@dataclass(frozen=True)
class HeuristicConfig:
    special_char_density: float = 0.35
    imperative_min: int = 3
    imperative_window_tokens: int = 50
    base64_run: int = 40


@dataclass(frozen=True)
class ScanReport:
    flagged: bool
    tier: int
    category: str = ""
    confidence: float = 0.0
    matched: tuple[str, ...] = ()


@dataclass(frozen=True)
class InterceptDecision:
    allow: bool
    verdict: Optional[GuardVerdict]
    cached: bool
    latency_ms: float
    reason: str = ""


def _load_patterns() -> list[tuple[str, str, re.Pattern]]:
    raw = resources.files("cogmem.data").joinpath(
        "injection_patterns.json").read_text()
    return [(e["id"], e["category"], re.compile(e["pattern"]))
            for e in json.loads(raw)]


_PATTERNS: Optional[list[tuple[str, str, re.Pattern]]] = None
_PATTERN_LOCK = threading.Lock()


def injection_patterns() -> list[tuple[str, str, re.Pattern]]:
    global _PATTERNS
    if _PATTERNS is None:
        with _PATTERN_LOCK:
            if _PATTERNS is None:
                _PATTERNS = _load_patterns()
    return _PATTERNS


_IMPERATIVE = re.compile(
    r"(?i)\b(ignore|reveal|print|execute|run|delete|send|write|repeat|"
    r"disregard|output|click|visit|download|paste|forward|copy)\b")
_BASE64_CHARS = "[A-Za-z0-9+/=]"


def scan_tier0(text: str) -> ScanReport:
    matched = []
    category = ""
    for pattern_id, pattern_category, pattern in injection_patterns():
        if pattern.search(text):
            matched.append(pattern_id)
            category = category or pattern_category
    if matched:
        return ScanReport(flagged=True, tier=0, category=category,
                          confidence=0.95, matched=tuple(matched))
    return ScanReport(flagged=False, tier=0)


def scan_tier1(text: str, config: HeuristicConfig = HeuristicConfig()
               ) -> ScanReport:
    if re.search(_BASE64_CHARS + "{%d,}" % config.base64_run, text):
        return ScanReport(flagged=True, tier=1, category="exfiltration",
                          confidence=0.75, matched=("t1-base64-run",))
    stripped = text.strip()
    if stripped:
        special = sum(1 for c in stripped
                      if not c.isalnum() and not c.isspace())
        if special / len(stripped) > config.special_char_density:
            return ScanReport(flagged=True, tier=1,
                              category="prompt_injection", confidence=0.7,
                              matched=("t1-special-char-density",))
    tokens = stripped.split()
    if len(tokens) <= config.imperative_window_tokens:
        imperatives = len(_IMPERATIVE.findall(stripped))
        if imperatives >= config.imperative_min:
            return ScanReport(flagged=True, tier=1,
                              category="prompt_injection", confidence=0.6,
                              matched=("t1-imperative-burst",))
    return ScanReport(flagged=False, tier=1)


def generate_canary() -> str:
    return f"cnry-{uuid.uuid4().hex[:16]}"


# Plugin contract for tiers 2-4: text -> ScanReport | None (None = clean).
TierPlugin = Callable[[str], Optional[ScanReport]]


class FirewallEngine:
    def __init__(self, guard: GuardEngine, store,
                 heuristics: HeuristicConfig = HeuristicConfig(),
                 plugins: Optional[dict[int, TierPlugin]] = None,
                 cache_ttl_ms: int = CACHE_TTL_MS,
                 clock: Callable[[], float] = time.time):
        self.guard = guard
        self.store = store
        self.heuristics = heuristics
        self.plugins = dict(plugins or {})
        self.cache_ttl_ms = cache_ttl_ms
        self.clock = clock
        self._canaries: set[str] = set()
        self._cache: dict[str, tuple[InterceptDecision, float, int]] = {}
        self._cache_lock = threading.Lock()

    # interception

    def intercept_tool_call(self, tool_name: str, args: dict,
                            session_key: str, profile: ProfilePolicy
                            ) -> InterceptDecision:
        start = time.perf_counter()
        strictness = self.guard.session_strictness(session_key, profile)
        canonical = json.dumps(args, sort_keys=True,
                               separators=(",", ":"), default=str)
        key = hashlib.sha256(
            f"{tool_name}\x00{canonical}\x00{strictness}".encode()).hexdigest()
        generation = self.guard.registry.generation
        now = self.clock() * 1000.0
        with self._cache_lock:
            entry = self._cache.get(key)
            if entry is not None:
                decision, expires_at, cached_generation = entry
                if now < expires_at and cached_generation == generation:
                    hit = replace(
                        decision, cached=True,
                        latency_ms=(time.perf_counter() - start) * 1000.0)
                    self._emit_intercept(tool_name, hit, session_key)
                    return hit
                del self._cache[key]
        decision = self._full_decision(tool_name, args, session_key, profile)
        decision = replace(
            decision, latency_ms=(time.perf_counter() - start) * 1000.0)
        # require_approval stays uncached so a granted approval takes
        # effect on the very next call
        if decision.verdict is not None \
                and decision.verdict.result != "require_approval":
            with self._cache_lock:
                self._cache[key] = (decision, now + self.cache_ttl_ms,
                                    generation)
        self._emit_intercept(tool_name, decision, session_key)
        return decision

    def _full_decision(self, tool_name, args, session_key, profile):
        action = {
            "description": self._describe(tool_name, args),
            "tool_name": tool_name,
        }
        for passthrough in ("claim_id", "requires_confirmation"):
            if passthrough in args:
                action[passthrough] = args[passthrough]
        try:
            verdict = self.guard.evaluate(action, session_key, profile)
        except Exception as exc:  # fail-closed
            return InterceptDecision(
                allow=False, verdict=None, cached=False, latency_ms=0.0,
                reason=f"safety evaluation failed, refusing call: {exc}")
        if verdict.result == "block":
            reason = "blocked by safety rules"
            if verdict.triggered_constraints:
                reason += ": " + verdict.triggered_constraints[0][1]
            return InterceptDecision(allow=False, verdict=verdict,
                                     cached=False, latency_ms=0.0,
                                     reason=reason)
        if verdict.result == "require_approval":
            return InterceptDecision(
                allow=False, verdict=verdict, cached=False, latency_ms=0.0,
                reason="supervisor approval required before this call; "
                       f"approval key {verdict.action_digest}")
        return InterceptDecision(allow=True, verdict=verdict, cached=False,
                                 latency_ms=0.0, reason=verdict.result)

    @staticmethod
    def _describe(tool_name: str, args: dict) -> str:
        parts = [tool_name.replace(".", " ").replace("_", " ")]
        parts.extend(str(v) for v in args.values())
        return " ".join(parts)[:500]

    def invalidate_cache(self) -> None:
        with self._cache_lock:
            self._cache.clear()

    # scanning

    def plant_canary(self, token: Optional[str] = None) -> str:
        token = token or generate_canary()
        self._canaries.add(token)
        return token

    def safety_scan(self, text: str, direction: str = "input",
                    tiers: tuple[int, ...] = ALL_TIERS,
                    session_key: str = "") -> ScanReport:
        report = ScanReport(flagged=False, tier=max(tiers) if tiers else 0)
        for tier in sorted(tiers):
            result = self._run_tier(tier, text, direction)
            if result is None:
                continue
            if result.flagged:
                report = result
                if result.confidence >= SHORT_CIRCUIT_CONFIDENCE:
                    break
        self.store.ledger.emit("safety_scan", {
            "direction": direction, "flagged": report.flagged,
            "tier": report.tier, "category": report.category,
            "confidence": report.confidence,
            "matched": list(report.matched)[:10],
        }, session_key=session_key, gateway_id=self.store.gateway_id)
        return report

    def _run_tier(self, tier, text, direction) -> Optional[ScanReport]:
        if tier == 0:
            return scan_tier0(text)
        if tier == 1:
            return scan_tier1(text, self.heuristics)
        if tier == 5:
            if direction != "output":
                return None
            for token in self._canaries:
                if token in text:
                    return ScanReport(flagged=True, tier=5,
                                      category="canary_leak", confidence=1.0,
                                      matched=(token,))
            return ScanReport(flagged=False, tier=5)
        plugin = self.plugins.get(tier)
        if plugin is None:
            return None
        try:
            return plugin(text)
        except Exception as exc:
            log.warning("scan tier %d plugin failed, skipping: %s", tier, exc)
            return None

    def ingest_gate(self, tool_output: str, session_key: str = "") -> dict:
        report = self.safety_scan(tool_output, direction="input",
                                  session_key=session_key)
        if report.flagged:
            return {"clean": False, "report": report}
        return {"clean": True}

    # plumbing

    def _emit_intercept(self, tool_name, decision, session_key):
        self.store.ledger.emit("firewall_intercept", {
            "tool_name": tool_name, "allow": decision.allow,
            "cached": decision.cached,
            "result": decision.verdict.result if decision.verdict else "error",
            "reason": decision.reason,
        }, session_key=session_key, gateway_id=self.store.gateway_id)
