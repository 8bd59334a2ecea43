"""Command-line client for the runtime HTTP API.

Every subcommand except `serve` talks to a running server over HTTP, so the
CLI and the REST surface cannot drift apart. `serve` starts that server.
"""

import json
import sys

import click
import httpx

DEFAULT_URL = "http://127.0.0.1:8440"


def build_client(url: str, gateway: str, session: str = "",
                 actor: str = "", org: str = "") -> httpx.Client:
    headers = {"X-Gateway-Id": gateway}
    if session:
        headers["X-Session-Key"] = session
    if actor:
        headers["X-Actor-Id"] = actor
    if org:
        headers["X-Org-Id"] = org
    return httpx.Client(base_url=url, headers=headers, timeout=30.0)


def _emit(payload) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


def _check(response: httpx.Response):
    if response.status_code >= 400:
        _emit({"status": response.status_code, "error": response.json()})
        sys.exit(1)
    return response.json()


@click.group()
def main():
    """Cognitive memory runtime."""


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8440, type=int)
@click.option("--directory", default=None,
              help="Persistence root; omit for in-memory operation.")
def serve(host, port, directory):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(directory=directory), host=host, port=port)


@main.command()
@click.option("--url", default=DEFAULT_URL)
@click.option("--gateway", required=True)
@click.option("--session", required=True)
@click.option("--profile", default="coding")
@click.argument("text", required=False)
def ingest(url, gateway, session, profile, text):
    """Ingest one conversation turn (argument or stdin)."""
    content = text if text is not None else sys.stdin.read()
    with build_client(url, gateway, session) as client:
        _emit(_check(client.post(
            f"/sessions/{session}/ingest",
            json={"messages": [{"role": "user", "content": content}],
                  "profile": profile})))


@main.command()
@click.option("--url", default=DEFAULT_URL)
@click.option("--gateway", required=True)
@click.option("--session", default="")
@click.option("--profile", default="coding")
@click.option("--limit", default=10, type=int)
@click.argument("query")
def search(url, gateway, session, profile, limit, query):
    """Search stored memory."""
    with build_client(url, gateway, session) as client:
        _emit(_check(client.post(
            "/memory/search",
            json={"query": query, "profile": profile, "limit": limit})))


@main.command()
@click.option("--url", default=DEFAULT_URL)
@click.option("--gateway", required=True)
@click.option("--session", required=True)
@click.option("--profile", default="coding")
@click.argument("turn_text")
def assemble(url, gateway, session, profile, turn_text):
    """Assemble context for a turn, bootstrapping the session if needed."""
    with build_client(url, gateway, session) as client:
        response = client.post(f"/sessions/{session}/assemble",
                               json={"turn_text": turn_text})
        if response.status_code == 404:
            _check(client.post("/sessions/bootstrap",
                               json={"session_key": session,
                                     "profile": profile}))
            response = client.post(f"/sessions/{session}/assemble",
                                   json={"turn_text": turn_text})
        _emit(_check(response))


@main.command()
@click.option("--url", default=DEFAULT_URL)
@click.option("--gateway", required=True)
def consolidate(url, gateway):
    """Run one maintenance cycle for the gateway."""
    with build_client(url, gateway) as client:
        _emit(_check(client.post("/consolidation/run")))


@main.command()
@click.option("--url", default=DEFAULT_URL)
@click.option("--gateway", required=True)
@click.option("--session", default=None)
@click.option("--type", "event_type", default=None)
@click.option("--summary", is_flag=True, default=False)
def traces(url, gateway, session, event_type, summary):
    """Query the trace ledger."""
    params = {}
    if session:
        params["session_key"] = session
    if event_type:
        params["event_type"] = event_type
    path = "/traces/summary" if summary else "/traces"
    with build_client(url, gateway) as client:
        _emit(_check(client.get(path, params=params)))


@main.command()
@click.option("--url", default=DEFAULT_URL)
@click.option("--gateway", required=True)
@click.option("--actor", required=True,
              help="Supervisor actor id making the decision.")
@click.option("--decision", type=click.Choice(["approved", "rejected"]),
              default="approved")
@click.argument("approval_id", required=False)
def approve(url, gateway, actor, decision, approval_id):
    """Decide a pending approval; without an id, list the queue."""
    with build_client(url, gateway, actor=actor) as client:
        if approval_id is None:
            _emit(_check(client.get("/approvals")))
        else:
            _emit(_check(client.post(f"/approvals/{approval_id}/decide",
                                     json={"decision": decision})))


@main.command()
@click.option("--url", default=DEFAULT_URL)
@click.option("--gateway", required=True)
@click.option("--org", default="")
@click.argument("preset")
def profile(url, gateway, org, preset):
    """Show a resolved profile, including org overrides and tuning."""
    with build_client(url, gateway, org=org) as client:
        _emit(_check(client.get(f"/profiles/{preset}")))


@main.command("demo-scenario")
@click.option("--url", default=DEFAULT_URL)
@click.option("--gateway", default="demo")
def demo_scenario(url, gateway):
    """Seed a small session and walk one guarded turn end to end."""
    session = "demo-session"
    with build_client(url, gateway, session) as client:
        _check(client.post("/sessions/bootstrap",
                           json={"session_key": session,
                                 "profile": "coding"}))
        for text, category in [
            ("the staging cluster runs in oregon", "system"),
            ("deploys must pass the integration suite first", "constraint"),
            ("yesterday's deploy was rolled back at noon", "event"),
        ]:
            _check(client.post("/memory", json={"text": text,
                                                "category": category}))
        goal = _check(client.post("/goals",
                                  json={"title": "ship the billing fix"}))
        assembled = _check(client.post(
            f"/sessions/{session}/assemble",
            json={"turn_text": "prepare the billing deploy"}))
        check = _check(client.post(
            "/firewall/check",
            json={"tool_name": "shell",
                  "args": {"description":
                           "delete production database backups"}}))
        _emit({
            "goal": goal["id"],
            "facts_in_context": len(assembled["block3"]),
            "constraints_in_context": len(assembled["block1"]),
            "dangerous_call_allowed": check["allow"],
            "verdict": check["verdict"],
        })


if __name__ == "__main__":
    main()
