"""Seeds a runtime with a known oversight scenario and serves it.

Prints "PORT <n>" once the fixture is ready so a test harness can attach.
Scenario: one supervisor, two pending approvals in different sessions,
five guard verdicts in a third session, one searchable memory with a
tool-supported claim, and one session goal.
"""

import socket
import sys

import uvicorn
from starlette.testclient import TestClient

from cogmem.service import create_app

GATEWAY = "gw-dash"
SUPERVISOR = "supervisor-1"


def seed(app) -> None:
    base = {"X-Gateway-Id": GATEWAY, "X-Actor-Id": SUPERVISOR}
    client = TestClient(app)

    r = client.post("/admin/actors", headers=base, json={
        "actor_id": SUPERVISOR, "actor_type": "human_coordinator",
        "authority_level": 95, "display_name": "Duty supervisor"})
    assert r.status_code == 201, r.text

    rt = app.state.runtimes[GATEWAY]
    claims = []
    for fact_ref, text in (("fact-hotfix", "hotfix build verified"),
                           ("fact-release", "release branch reviewed")):
        claim = rt.evidence.create_claim(fact_ref, text)
        rt.evidence.attach_evidence(claim.id, "chunk_reference", "ci-log")
        claims.append(claim)

    pending = [
        ("sess-alpha", "shipper", "deploy the hotfix branch", claims[0]),
        ("sess-beta", "shipper", "merge the release branch", claims[1]),
    ]
    for session, tool, command, claim in pending:
        r = client.post("/firewall/check",
                        headers={**base, "X-Session-Key": session},
                        json={"tool_name": tool,
                              "args": {"command": command,
                                       "claim_id": claim.id}})
        assert r.status_code == 200, r.text
        body = r.json()
        assert body["verdict"] == "require_approval", body
        assert "approval_id" in body, body

    # five benign verdicts so the timeline has one event per turn
    ops = {**base, "X-Session-Key": "sess-ops"}
    for i in range(5):
        r = client.post("/firewall/check", headers=ops,
                        json={"tool_name": "reader",
                              "args": {"path": f"runbook-page-{i}"}})
        assert r.status_code == 200 and r.json()["allow"], r.text

    r = client.post("/memory", headers=ops, json={
        "text": "the release checklist lives in the ops handbook",
        "category": "general"})
    assert r.status_code == 201, r.text
    fact_id = r.json()["fact_id"]
    claim = rt.evidence.create_claim(fact_id, "checklist location confirmed")
    rt.evidence.attach_evidence(claim.id, "tool_output", "wiki-fetch")

    r = client.post("/goals", headers=ops,
                    json={"title": "ship the hotfix safely"})
    assert r.status_code == 201, r.text

    queue = client.get("/approvals", headers=base).json()["approvals"]
    assert len(queue) == 2, queue


def main() -> None:
    app = create_app()
    seed(app)
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    print(f"PORT {port}", flush=True)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")


if __name__ == "__main__":
    try:
        main()
    except AssertionError as exc:
        print(f"SEED FAILED: {exc}", file=sys.stderr, flush=True)
        raise
