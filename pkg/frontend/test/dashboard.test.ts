// Live test against a seeded runtime: 2 pending approvals, 5 guard
// verdicts, 1 memory with a tool-supported claim, 1 session goal.
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { spawn, ChildProcess } from "node:child_process";
import { fileURLToPath } from "node:url";
import { dirname, join } from "node:path";

import { ApiClient } from "../src/api.js";
import { renderApprovalQueue } from "../src/approvals.js";
import { renderGuardTimeline } from "../src/timeline.js";
import { renderMemoryResults } from "../src/memory.js";
import { renderGoalTree } from "../src/goals.js";
import type { FactEvidence } from "../src/api.js";

const here = dirname(fileURLToPath(import.meta.url));

let server: ChildProcess;
let baseUrl: string;

function supervisor(sessionKey?: string): ApiClient {
  return new ApiClient({
    baseUrl,
    gatewayId: "gw-dash",
    actorId: "supervisor-1",
    sessionKey,
  });
}

async function waitReady(url: string, timeoutMs = 60_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const res = await fetch(url + "/healthz");
      if (res.ok) return;
    } catch {
      // server not up yet
    }
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error("fixture server did not become ready");
}

beforeAll(async () => {
  server = spawn("python3", [join(here, "fixture_server.py")], {
    stdio: ["ignore", "pipe", "inherit"],
  });
  const port: number = await new Promise((resolve, reject) => {
    let buffer = "";
    server.stdout!.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const match = buffer.match(/PORT (\d+)/);
      if (match) resolve(Number(match[1]));
    });
    server.on("exit", (code) =>
      reject(new Error(`fixture server exited early (${code})`)));
  });
  baseUrl = `http://127.0.0.1:${port}`;
  await waitReady(baseUrl);
});

afterAll(() => {
  server?.kill();
});

describe("approval queue", () => {
  it("shows both pending approvals", async () => {
    const client = supervisor();
    const { approvals } = await client.listApprovals("pending");
    expect(approvals).toHaveLength(2);

    const root = document.createElement("div");
    document.body.appendChild(root);
    renderApprovalQueue(root, approvals, async () => {});
    const rows = root.querySelectorAll(".approval-row");
    expect(rows).toHaveLength(2);
    for (const row of rows) {
      expect(row.classList.contains("status-pending")).toBe(true);
      expect(row.querySelector(".btn-approve")).not.toBeNull();
    }
  });

  it("approve transitions the row and records a supervisor signoff",
     async () => {
    const client = supervisor();
    const { approvals } = await client.listApprovals("pending");
    const target = approvals.find(
      (a) => a.session_key === "sess-alpha")!;
    expect(target).toBeDefined();

    const root = document.createElement("div");
    document.body.appendChild(root);
    let settled: Promise<void> = Promise.resolve();
    renderApprovalQueue(root, approvals, (id, decision) => {
      settled = (async () => {
        await client.decideApproval(id, decision);
        const refreshed = await client.listApprovals("");
        renderApprovalQueue(root, refreshed.approvals, async () => {});
      })();
      return settled;
    });

    const row = root.querySelector<HTMLElement>(
      `[data-approval-id="${target.id}"]`)!;
    row.querySelector<HTMLButtonElement>(".btn-approve")!.click();
    await settled;

    const decided = root.querySelector<HTMLElement>(
      `[data-approval-id="${target.id}"]`)!;
    expect(decided.classList.contains("status-approved")).toBe(true);
    expect(decided.querySelector(".approval-status")!.textContent)
      .toContain("supervisor-1");

    // the runtime, not the UI, attaches the signoff evidence
    const { events } = await client.traces(
      { event_type: "claim_state_changed" });
    const signoff = events.find(
      (e) => e.payload["evidence_type"] === "supervisor_signoff");
    expect(signoff).toBeDefined();
    expect(signoff!.payload["new_state"]).toBe("SUPERVISOR_VERIFIED");
    expect(signoff!.payload["claim_id"]).toBe(target.claim_id);

    const remaining = await client.listApprovals("pending");
    expect(remaining.approvals).toHaveLength(1);
  });
});

describe("guard timeline", () => {
  it("renders all five events in turn order", async () => {
    const client = supervisor();
    const { events } = await client.traces(
      { session_key: "sess-ops", event_type: "guard_verdict" });
    expect(events).toHaveLength(5);

    const root = document.createElement("div");
    document.body.appendChild(root);
    renderGuardTimeline(root, events);
    const rows = [...root.querySelectorAll<HTMLElement>(".guard-event")];
    expect(rows).toHaveLength(5);
    expect(rows.map((r) => r.dataset.turn)).toEqual(
      ["1", "2", "3", "4", "5"]);

    const sorted = [...events].sort((a, b) => a.ts - b.ts);
    expect(events.map((e) => e.id)).toEqual(sorted.map((e) => e.id));
    for (const row of rows) {
      expect(row.querySelector(".badge-pass")).not.toBeNull();
    }
  });
});

describe("memory browser", () => {
  it("shows search hits with their evidence state", async () => {
    const client = supervisor("sess-ops");
    const { candidates } = await client.searchMemory(
      "release checklist ops handbook");
    expect(candidates.length).toBeGreaterThan(0);

    const evidence = new Map<string, FactEvidence>();
    for (const hit of candidates) {
      evidence.set(hit.fact_id, await client.factEvidence(hit.fact_id));
    }
    const root = document.createElement("div");
    document.body.appendChild(root);
    renderMemoryResults(root, candidates, evidence);
    const badge = root.querySelector(".state-tool_supported");
    expect(badge).not.toBeNull();
    expect(badge!.textContent).toBe("tool supported");
  });
});

describe("goal view", () => {
  it("lists the seeded session goal", async () => {
    const client = supervisor("sess-ops");
    const goals = await client.listGoals("sess-ops");
    expect(goals.session_goals.length).toBeGreaterThan(0);

    const root = document.createElement("div");
    document.body.appendChild(root);
    renderGoalTree(root, goals.session_goals, goals.persistent_goals);
    const titles = [...root.querySelectorAll(".goal-title")]
      .map((el) => el.textContent);
    expect(titles).toContain("ship the hotfix safely");
  });
});
