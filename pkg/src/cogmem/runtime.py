"""Dependency wiring for the three deployment tiers.

A runtime owns one gateway's worth of state. The tier decides which modules
exist at all: a memory-only deployment never pays for working-set scoring,
guard evaluation, or consolidation, and the container records exactly what it
built so tests can assert on it.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Callable, Optional

from .consolidation import ConsolidationEngine
from .embeddings import EmbeddingService
from .evidence import EvidenceEngine
from .firewall import FirewallEngine
from .goals import GoalManager
from .guard import GuardEngine, GuardRegistry
from .ingest import IngestPipelines
from .lifecycle import ContextLifecycle
from .procedures import ProcedureEngine
from .profiles import RuleStore
from .providers import ScriptedProvider
from .rerank import Reranker
from .retrieval import Retriever
from .store import MemoryStore
from .trace import TraceLedger

logger = logging.getLogger(__name__)

TIER_MEMORY_ONLY = "memory_only"
TIER_CONTEXT_ONLY = "context_only"
TIER_FULL = "full"

# module names per tier; the ledger, store, and embeddings are substrate
# and exist everywhere
TIER_MODULES: dict[str, frozenset[str]] = {
    TIER_MEMORY_ONLY: frozenset({
        "goals", "evidence", "procedures", "retriever", "reranker",
        "ingest",
    }),
    TIER_CONTEXT_ONLY: frozenset({
        "goals", "evidence", "procedures", "guard", "lifecycle",
    }),
    TIER_FULL: frozenset({
        "goals", "evidence", "procedures", "retriever", "reranker",
        "ingest", "guard", "firewall", "lifecycle", "consolidation",
        "rule_store",
    }),
}


class Runtime:
    """Container for one gateway. Only tier-enabled modules are built;
    accessing a disabled one raises AttributeError."""

    def __init__(
        self,
        gateway_id: str = "default",
        tier: str = TIER_FULL,
        provider=None,
        directory: Optional[str | Path] = None,
        clock=None,
    ):
        if tier not in TIER_MODULES:
            raise ValueError(
                f"unknown tier {tier!r}; expected one of "
                f"{sorted(TIER_MODULES)}")
        self.gateway_id = gateway_id
        self.tier = tier
        self.directory = Path(directory) if directory else None
        self.provider = provider if provider is not None else ScriptedProvider()
        self.instantiated: set[str] = set()
        self._modules: dict[str, object] = {}

        ledger_dir = self.directory / "traces" if self.directory else None
        store_kw = {"gateway_id": gateway_id,
                    "ledger": TraceLedger(directory=ledger_dir),
                    "directory": self.directory}
        if clock is not None:
            store_kw["clock"] = clock
        self.ledger = store_kw["ledger"]
        self.store = MemoryStore(**store_kw)
        self.embeddings = EmbeddingService()
        self._build(TIER_MODULES[tier])

    # -- construction -------------------------------------------------------

    def _build(self, enabled: frozenset[str]) -> None:
        factories: dict[str, Callable[[], object]] = {
            "rule_store": self._make_rule_store,
            "goals": self._make_goals,
            "evidence": self._make_evidence,
            "procedures": self._make_procedures,
            "retriever": self._make_retriever,
            "reranker": self._make_reranker,
            "guard": self._make_guard,
            "firewall": self._make_firewall,
            "ingest": self._make_ingest,
            "lifecycle": self._make_lifecycle,
            "consolidation": self._make_consolidation,
        }
        order = ["rule_store", "goals", "evidence", "procedures",
                 "retriever", "reranker", "guard", "firewall", "ingest",
                 "lifecycle", "consolidation"]
        for name in order:
            if name in enabled:
                self._modules[name] = factories[name]()
                self.instantiated.add(name)

    def _get(self, name: str):
        return self._modules.get(name)

    def __getattr__(self, name: str):
        # __getattr__ only fires for names missing from the instance dict,
        # i.e. modules the tier did not build
        modules = self.__dict__.get("_modules", {})
        if name in modules:
            return modules[name]
        raise AttributeError(
            f"module {name!r} is not part of tier {self.__dict__.get('tier')!r}")

    def __contains__(self, name: str) -> bool:
        return name in self._modules

    def _make_rule_store(self):
        path = str(self.directory / "rules.db") if self.directory \
            else ":memory:"
        return RuleStore(path=path)

    def _make_goals(self):
        return GoalManager(self.store, self.embeddings, self.provider)

    def _make_evidence(self):
        return EvidenceEngine(self.store)

    def _make_procedures(self):
        return ProcedureEngine(self.store, self._get("evidence"))

    def _make_retriever(self):
        return Retriever(self.store, self.embeddings)

    def _make_reranker(self):
        return Reranker(ledger=self.ledger)

    def _make_guard(self):
        return GuardEngine(self.store, GuardRegistry(self.embeddings),
                           embeddings=self.embeddings,
                           provider=self.provider)

    def _make_firewall(self):
        return FirewallEngine(self._get("guard"), self.store)

    def _make_ingest(self):
        return IngestPipelines(
            self.store, self.embeddings, self.provider,
            goals=self._get("goals"), procedures=self._get("procedures"),
            firewall=self._get("firewall"))

    def _make_lifecycle(self):
        return ContextLifecycle(
            self.store, self.embeddings, provider=self.provider,
            retriever=self._get("retriever"),
            reranker=self._get("reranker"),
            guard=self._get("guard"), goals=self._get("goals"),
            evidence=self._get("evidence"),
            procedures=self._get("procedures"),
            rule_store=self._get("rule_store"))

    def _make_consolidation(self):
        audit = self.directory / "audit" if self.directory else None
        return ConsolidationEngine(
            self.store, self.embeddings, provider=self.provider,
            rule_store=self._get("rule_store"),
            procedures=self._get("procedures"), audit_dir=audit)
