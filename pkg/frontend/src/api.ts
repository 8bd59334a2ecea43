/** Typed client for the runtime REST API.
 *
 * The dashboard holds no authoritative state: every number shown comes
 * from one of these calls, and the only mutations are approval decisions
 * and guard-rule management.
 */

export interface DashboardSession {
  baseUrl: string;
  gatewayId: string;
  actorId: string;
  sessionKey?: string;
  orgId?: string;
  refreshMs?: number;
}

export interface Approval {
  id: string;
  session_key: string;
  action_digest: string;
  verdict: string;
  required_rule: string;
  tool_name: string;
  args: Record<string, unknown>;
  claim_id: string;
  requested_at: number;
  status: string;
  decided_by: string;
  evidence?: { claim_id: string; state: string } | null;
}

export interface TraceEvent {
  id: string;
  ts: number;
  event_type: string;
  session_key: string;
  gateway_id: string;
  actor_id: string;
  payload: Record<string, unknown>;
}

export interface SearchHit {
  fact_id: string;
  text: string;
  score: number;
  sources: string[];
}

export interface FactEvidence {
  fact_id: string;
  best_state: string | null;
  confidence_multiplier: number;
  claims: Array<{
    id: string;
    claim_text: string;
    state: string;
    evidence: Array<{ evidence_type: string; ref_value: string }>;
  }>;
}

export interface Goal {
  id: string;
  title: string;
  status: string;
  scope: string;
  blockers?: string[];
  progress_notes?: string[];
  [key: string]: unknown;
}

export class ApiError extends Error {
  status: number;
  detail: unknown;

  constructor(status: number, detail: unknown) {
    super(typeof detail === "string" ? detail : JSON.stringify(detail));
    this.status = status;
    this.detail = detail;
  }
}

export class ApiClient {
  session: DashboardSession;

  constructor(session: DashboardSession) {
    this.session = session;
  }

  private headers(): Record<string, string> {
    const h: Record<string, string> = {
      "Content-Type": "application/json",
      "X-Gateway-Id": this.session.gatewayId,
      "X-Actor-Id": this.session.actorId,
    };
    if (this.session.sessionKey) h["X-Session-Key"] = this.session.sessionKey;
    if (this.session.orgId) h["X-Org-Id"] = this.session.orgId;
    return h;
  }

  private async request<T>(method: string, path: string,
                           body?: unknown): Promise<T> {
    const res = await fetch(this.session.baseUrl + path, {
      method,
      headers: this.headers(),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await res.text();
    const data = text ? JSON.parse(text) : null;
    if (!res.ok) {
      throw new ApiError(res.status, data?.detail ?? data);
    }
    return data as T;
  }

  listApprovals(status = "pending"): Promise<{ approvals: Approval[] }> {
    return this.request("GET", `/approvals?status=${status}`);
  }

  decideApproval(id: string, decision: "approved" | "rejected"):
      Promise<Approval> {
    return this.request("POST", `/approvals/${id}/decide`, { decision });
  }

  traces(params: { session_key?: string; event_type?: string } = {}):
      Promise<{ events: TraceEvent[] }> {
    const q = new URLSearchParams();
    if (params.session_key) q.set("session_key", params.session_key);
    if (params.event_type) q.set("event_type", params.event_type);
    const qs = q.toString();
    return this.request("GET", qs ? `/traces?${qs}` : "/traces");
  }

  tracesSummary(sessionKey?: string): Promise<Record<string, unknown>> {
    const qs = sessionKey ? `?session_key=${sessionKey}` : "";
    return this.request("GET", `/traces/summary${qs}`);
  }

  searchMemory(query: string, limit = 20):
      Promise<{ candidates: SearchHit[] }> {
    return this.request("POST", "/memory/search", { query, limit });
  }

  factEvidence(factId: string): Promise<FactEvidence> {
    return this.request("GET", `/memory/${factId}/evidence`);
  }

  listGoals(sessionKey?: string):
      Promise<{ session_goals: Goal[]; persistent_goals: Goal[] }> {
    const qs = sessionKey ? `?session_key=${sessionKey}` : "";
    return this.request("GET", `/goals${qs}`);
  }

  guardStatus(): Promise<{ strictness: string; generation: number;
                           rule_count: number }> {
    return this.request("GET", "/guard/status");
  }

  addGuardRule(rule: { pattern: string; pattern_kind?: string;
                       severity_on_match?: string }):
      Promise<{ rule_id: string; generation: number }> {
    return this.request("POST", "/guard/rules", rule);
  }
}
