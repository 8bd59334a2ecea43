import { Approval } from "./api.js";

export type DecideHandler =
  (id: string, decision: "approved" | "rejected") => Promise<void>;

function shortDigest(digest: string): string {
  return digest.length > 12 ? digest.slice(0, 12) : digest;
}

/** Cross-session pending-approval queue. Rows are rebuilt from server
 * state on every refresh; no optimistic transitions. */
export function renderApprovalQueue(root: HTMLElement, rows: Approval[],
                                    onDecide: DecideHandler): void {
  root.innerHTML = "";
  if (rows.length === 0) {
    const empty = document.createElement("p");
    empty.className = "empty";
    empty.textContent = "No approvals in this view.";
    root.appendChild(empty);
    return;
  }
  const table = document.createElement("table");
  table.className = "approval-table";
  const head = document.createElement("tr");
  for (const label of ["Tool", "Session", "Digest", "Rule", "Status", ""]) {
    const th = document.createElement("th");
    th.textContent = label;
    head.appendChild(th);
  }
  table.appendChild(head);

  for (const row of rows) {
    const tr = document.createElement("tr");
    tr.className = `approval-row status-${row.status}`;
    tr.dataset.approvalId = row.id;

    const cells = [row.tool_name, row.session_key,
                   shortDigest(row.action_digest), row.required_rule];
    for (const text of cells) {
      const td = document.createElement("td");
      td.textContent = text;
      tr.appendChild(td);
    }

    const statusTd = document.createElement("td");
    statusTd.className = "approval-status";
    statusTd.textContent = row.status +
      (row.decided_by ? ` by ${row.decided_by}` : "");
    tr.appendChild(statusTd);

    const actionTd = document.createElement("td");
    if (row.status === "pending") {
      for (const decision of ["approved", "rejected"] as const) {
        const btn = document.createElement("button");
        btn.className = decision === "approved" ? "btn-approve" : "btn-reject";
        btn.textContent = decision === "approved" ? "Approve" : "Reject";
        btn.addEventListener("click", async () => {
          btn.disabled = true;
          try {
            await onDecide(row.id, decision);
          } catch (err) {
            btn.disabled = false;
            showInlineError(tr, err);
          }
        });
        actionTd.appendChild(btn);
      }
    }
    tr.appendChild(actionTd);
    table.appendChild(tr);
  }
  root.appendChild(table);
}

function showInlineError(row: HTMLTableRowElement, err: unknown): void {
  let msg = String(err);
  const detail = (err as { detail?: unknown }).detail;
  if (detail && typeof detail === "object") {
    const d = detail as { rule_id?: string; reason?: string };
    msg = d.reason ?? msg;
    if (d.rule_id) msg += ` (rule ${d.rule_id})`;
  }
  const existing = row.querySelector(".inline-error");
  if (existing) existing.remove();
  const span = document.createElement("span");
  span.className = "inline-error";
  span.textContent = msg;
  row.lastElementChild?.appendChild(span);
}
