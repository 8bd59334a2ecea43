import { TraceEvent } from "./api.js";

// Verdicts that get a colored badge. Anything else falls back to "info".
const VERDICT_CLASSES = new Set(["pass", "warn", "block", "require_approval",
                                 "hard_stop"]);

export function badgeClassFor(event: TraceEvent): string {
  if (event.event_type === "strictness_tightened") return "badge-strictness";
  const result = String(event.payload["result"] ?? "info");
  return VERDICT_CLASSES.has(result) ? `badge-${result}` : "badge-info";
}

/** Guard events in turn order, oldest first. A strictness change renders
 * as a marker row between verdicts so the tightening point is visible. */
export function renderGuardTimeline(root: HTMLElement,
                                    events: TraceEvent[]): void {
  root.innerHTML = "";
  const ordered = [...events].sort((a, b) => a.ts - b.ts);
  if (ordered.length === 0) {
    const empty = document.createElement("p");
    empty.className = "empty";
    empty.textContent = "No guard activity recorded.";
    root.appendChild(empty);
    return;
  }
  const list = document.createElement("ol");
  list.className = "guard-timeline";
  let turn = 0;
  for (const event of ordered) {
    const li = document.createElement("li");
    if (event.event_type === "strictness_tightened") {
      li.className = "strictness-marker";
      li.textContent = `strictness tightened: ${event.payload["from"]}` +
        ` to ${event.payload["to"]}`;
      list.appendChild(li);
      continue;
    }
    turn += 1;
    li.className = "guard-event";
    li.dataset.turn = String(turn);

    const badge = document.createElement("span");
    badge.className = `badge ${badgeClassFor(event)}`;
    badge.textContent = String(event.payload["result"] ?? event.event_type);
    li.appendChild(badge);

    const meta = document.createElement("span");
    meta.className = "event-meta";
    const domain = event.payload["domain"];
    const layers = event.payload["layers"];
    meta.textContent = [
      `turn ${turn}`,
      domain ? `domain ${domain}` : "",
      Array.isArray(layers) && layers.length
        ? `layers ${layers.join(",")}` : "",
    ].filter(Boolean).join(" · ");
    li.appendChild(meta);

    const rules = event.payload["rules"];
    if (Array.isArray(rules) && rules.length) {
      const ruleSpan = document.createElement("span");
      ruleSpan.className = "event-rules";
      ruleSpan.textContent = rules.join(", ");
      li.appendChild(ruleSpan);
    }
    list.appendChild(li);
  }
  root.appendChild(list);
}
