import { FactEvidence, SearchHit } from "./api.js";

const STATE_LABELS: Record<string, string> = {
  SUPERVISOR_VERIFIED: "supervisor verified",
  TOOL_SUPPORTED: "tool supported",
  SELF_SUPPORTED: "self supported",
  UNVERIFIED: "unverified",
  REJECTED: "rejected",
};

export function renderMemoryResults(
    root: HTMLElement, hits: SearchHit[],
    evidenceByFact: Map<string, FactEvidence>): void {
  root.innerHTML = "";
  if (hits.length === 0) {
    const empty = document.createElement("p");
    empty.className = "empty";
    empty.textContent = "No matching memories.";
    root.appendChild(empty);
    return;
  }
  const list = document.createElement("ul");
  list.className = "memory-list";
  for (const hit of hits) {
    const li = document.createElement("li");
    li.className = "memory-item";
    li.dataset.factId = hit.fact_id;

    const text = document.createElement("div");
    text.className = "memory-text";
    text.textContent = hit.text;
    li.appendChild(text);

    const meta = document.createElement("div");
    meta.className = "memory-meta";
    meta.textContent =
      `score ${hit.score.toFixed(3)} · ${hit.sources.join("+")}`;
    li.appendChild(meta);

    const evidence = evidenceByFact.get(hit.fact_id);
    const state = evidence?.best_state ?? null;
    const badge = document.createElement("span");
    badge.className = state
      ? `evidence-state state-${state.toLowerCase()}`
      : "evidence-state state-none";
    badge.textContent = state ? STATE_LABELS[state] ?? state : "no claims";
    li.appendChild(badge);

    if (evidence && evidence.claims.length) {
      const claims = document.createElement("ul");
      claims.className = "claim-list";
      for (const claim of evidence.claims) {
        const entry = document.createElement("li");
        entry.textContent = `${claim.claim_text} [${claim.state}] ` +
          claim.evidence.map((e) => e.evidence_type).join(", ");
        claims.appendChild(entry);
      }
      li.appendChild(claims);
    }
    list.appendChild(li);
  }
  root.appendChild(list);
}
