"""Append-only JSONL trace ledger with predicate queries and session
summaries.

Events are buffered in memory and, when a ledger directory is configured,
appended atomically as one JSON line per event to one file per gateway per
day. Nothing ever mutates or deletes a written event.
"""

from __future__ import annotations

import json
import threading
import time
from contextvars import ContextVar
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, Field

# Documented event-type enumeration. The set is extensible at runtime via
# register_event_type(); these are the types the runtime itself emits.
EVENT_TYPES = {
    "session_start",
    "session_end",
    "fact_stored",
    "fact_deduplicated",
    "fact_updated",
    "gdpr_deletion",
    "record_use_dropped",
    "degraded_operation",
    "guard_verdict",
    "guard_rule_registered",
    "strictness_tightened",
    "firewall_intercept",
    "safety_scan",
    "approval_requested",
    "approval_decided",
    "claim_state_changed",
    "claim_rejected",
    "goal_audit",
    "goal_flushed",
    "procedure_audit",
    "scoring_snapshot",
    "working_set_over_allocated",
    "consolidation_report",
    "compaction",
    "subagent_spawn",
    "subagent_end",
    "ingest_report",
}

# W3C traceparent for the current request, attached to every event emitted
# while handling it.
current_traceparent: ContextVar[Optional[str]] = ContextVar(
    "current_traceparent", default=None
)


def register_event_type(name: str) -> None:
    EVENT_TYPES.add(name)


class TraceEvent(BaseModel, frozen=True):
    event_type: str
    session_key: str = ""
    gateway_id: str = ""
    actor_id: str = ""
    ts: int = 0
    traceparent: Optional[str] = None
    payload: dict = Field(default_factory=dict)


class TraceLedger:
    def __init__(self, directory: Optional[str | Path] = None):
        self.directory = Path(directory) if directory else None
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)
        self._events: list[TraceEvent] = []
        self._lock = threading.Lock()

    def emit(
        self,
        event_type: str,
        payload: Optional[dict] = None,
        *,
        session_key: str = "",
        gateway_id: str = "",
        actor_id: str = "",
        ts: Optional[int] = None,
    ) -> TraceEvent:
        if event_type not in EVENT_TYPES:
            register_event_type(event_type)
        event = TraceEvent(
            event_type=event_type,
            session_key=session_key,
            gateway_id=gateway_id,
            actor_id=actor_id,
            ts=ts if ts is not None else int(time.time() * 1000),
            traceparent=current_traceparent.get(),
            payload=payload or {},
        )
        with self._lock:
            self._events.append(event)
            if self.directory:
                self._write_line(event)
        return event

    def _write_line(self, event: TraceEvent) -> None:
        day = time.strftime("%Y%m%d", time.gmtime(event.ts / 1000))
        gateway = event.gateway_id or "default"
        path = self.directory / f"{gateway}-{day}.jsonl"
        with path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event.model_dump(mode="json"), sort_keys=True) + "\n")

    def query(
        self,
        *,
        session_key: Optional[str] = None,
        gateway_id: Optional[str] = None,
        event_type: Optional[str] = None,
        event_types: Optional[set[str]] = None,
        actor_id: Optional[str] = None,
        since: Optional[int] = None,
        until: Optional[int] = None,
    ) -> list[TraceEvent]:
        with self._lock:
            events = list(self._events)
        out = []
        for ev in events:
            if session_key is not None and ev.session_key != session_key:
                continue
            if gateway_id is not None and ev.gateway_id != gateway_id:
                continue
            if event_type is not None and ev.event_type != event_type:
                continue
            if event_types is not None and ev.event_type not in event_types:
                continue
            if actor_id is not None and ev.actor_id != actor_id:
                continue
            if since is not None and ev.ts < since:
                continue
            if until is not None and ev.ts > until:
                continue
            out.append(ev)
        return out

    def session_summary(self, **predicates) -> dict:
        """Aggregate summary over the events matching the predicates.

        Computed fields: total_events, distinct_event_types, counts_by_type,
        first_ts, last_ts, duration_ms, distinct_actors, distinct_sessions,
        distinct_gateways, degraded_operations, guard_verdicts, guard_blocks,
        guard_warns, gdpr_deletions, facts_stored, facts_deduplicated,
        approvals_pending_decided, type_distribution.
        """
        events = self.query(**predicates)
        counts: dict[str, int] = {}
        for ev in events:
            counts[ev.event_type] = counts.get(ev.event_type, 0) + 1
        ts_values = [ev.ts for ev in events]
        total = len(events)
        verdicts = [ev for ev in events if ev.event_type == "guard_verdict"]
        return {
            "total_events": total,
            "distinct_event_types": len(counts),
            "counts_by_type": counts,
            "first_ts": min(ts_values) if ts_values else None,
            "last_ts": max(ts_values) if ts_values else None,
            "duration_ms": (max(ts_values) - min(ts_values)) if ts_values else 0,
            "distinct_actors": len({ev.actor_id for ev in events if ev.actor_id}),
            "distinct_sessions": len({ev.session_key for ev in events if ev.session_key}),
            "distinct_gateways": len({ev.gateway_id for ev in events if ev.gateway_id}),
            "degraded_operations": counts.get("degraded_operation", 0),
            "guard_verdicts": len(verdicts),
            "guard_blocks": sum(1 for ev in verdicts if ev.payload.get("result") == "block"),
            "guard_warns": sum(1 for ev in verdicts if ev.payload.get("result") == "warn"),
            "gdpr_deletions": counts.get("gdpr_deletion", 0),
            "facts_stored": counts.get("fact_stored", 0),
            "facts_deduplicated": counts.get("fact_deduplicated", 0),
            "approvals_decided": counts.get("approval_decided", 0),
            "type_distribution": {
                k: (v / total if total else 0.0) for k, v in counts.items()
            },
        }

    def all_events(self) -> list[TraceEvent]:
        with self._lock:
            return list(self._events)
