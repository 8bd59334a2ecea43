import { ApiClient, DashboardSession, FactEvidence } from "./api.js";
import { renderApprovalQueue } from "./approvals.js";
import { renderGuardTimeline } from "./timeline.js";
import { renderMemoryResults } from "./memory.js";
import { renderGoalTree } from "./goals.js";

const DEFAULT_REFRESH_MS = 3000;

function readSession(): DashboardSession {
  const get = (id: string) =>
    (document.getElementById(id) as HTMLInputElement).value.trim();
  return {
    baseUrl: "",
    gatewayId: get("cfg-gateway"),
    actorId: get("cfg-actor"),
    sessionKey: get("cfg-session") || undefined,
    orgId: get("cfg-org") || undefined,
    refreshMs: DEFAULT_REFRESH_MS,
  };
}

type TabName = "approvals" | "timeline" | "memory" | "goals";

let activeTab: TabName = "approvals";
let timer: number | undefined;

async function refreshApprovals(client: ApiClient): Promise<void> {
  const root = document.getElementById("approvals-root")!;
  const status = (document.getElementById("approvals-filter") as
    HTMLSelectElement).value;
  const { approvals } = await client.listApprovals(status);
  renderApprovalQueue(root, approvals, async (id, decision) => {
    await client.decideApproval(id, decision);
    await refreshApprovals(client);
  });
}

async function refreshTimeline(client: ApiClient): Promise<void> {
  const root = document.getElementById("timeline-root")!;
  const filter = (document.getElementById("timeline-session") as
    HTMLInputElement).value.trim();
  const [verdicts, tightenings] = await Promise.all([
    client.traces({ session_key: filter || undefined,
                    event_type: "guard_verdict" }),
    client.traces({ session_key: filter || undefined,
                    event_type: "strictness_tightened" }),
  ]);
  renderGuardTimeline(root, [...verdicts.events, ...tightenings.events]);
}

async function refreshMemory(client: ApiClient): Promise<void> {
  const root = document.getElementById("memory-root")!;
  const query = (document.getElementById("memory-query") as
    HTMLInputElement).value.trim();
  if (!query) {
    root.innerHTML = "<p class=\"empty\">Enter a search query.</p>";
    return;
  }
  const { candidates } = await client.searchMemory(query);
  const evidence = new Map<string, FactEvidence>();
  await Promise.all(candidates.map(async (hit) => {
    evidence.set(hit.fact_id, await client.factEvidence(hit.fact_id));
  }));
  renderMemoryResults(root, candidates, evidence);
}

async function refreshGoals(client: ApiClient): Promise<void> {
  const root = document.getElementById("goals-root")!;
  const goals = await client.listGoals(client.session.sessionKey);
  renderGoalTree(root, goals.session_goals, goals.persistent_goals);
}

async function refreshActive(): Promise<void> {
  const client = new ApiClient(readSession());
  const bar = document.getElementById("status-bar")!;
  try {
    if (activeTab === "approvals") await refreshApprovals(client);
    else if (activeTab === "timeline") await refreshTimeline(client);
    else if (activeTab === "memory") await refreshMemory(client);
    else await refreshGoals(client);
    const status = await client.guardStatus();
    bar.textContent = `strictness ${status.strictness} · ` +
      `${status.rule_count} guard rules · generation ${status.generation}`;
    bar.classList.remove("error");
  } catch (err) {
    bar.textContent = String(err);
    bar.classList.add("error");
  }
}

function selectTab(tab: TabName): void {
  activeTab = tab;
  for (const panel of document.querySelectorAll<HTMLElement>(".tab-panel")) {
    panel.hidden = panel.dataset.tab !== tab;
  }
  for (const btn of document.querySelectorAll<HTMLElement>(".tab-button")) {
    btn.classList.toggle("active", btn.dataset.tab === tab);
  }
  void refreshActive();
}

export function startDashboard(): void {
  for (const btn of document.querySelectorAll<HTMLElement>(".tab-button")) {
    btn.addEventListener("click", () =>
      selectTab(btn.dataset.tab as TabName));
  }
  document.getElementById("memory-search-btn")!
    .addEventListener("click", () => void refreshActive());
  document.getElementById("refresh-now")!
    .addEventListener("click", () => void refreshActive());
  selectTab("approvals");
  if (timer !== undefined) clearInterval(timer);
  timer = setInterval(() => void refreshActive(),
                      DEFAULT_REFRESH_MS) as unknown as number;
}

if (typeof document !== "undefined" &&
    document.getElementById("app") !== null) {
  startDashboard();
}
