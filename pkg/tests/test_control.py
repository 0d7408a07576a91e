"""Control API: auth, rules, flows, observations, profiles, report, events."""

from __future__ import annotations

import http.client
import json
import socket
import threading
import time
from types import SimpleNamespace

import pytest

from apifray.control import API_PREFIX, ControlServer, ProfileBook, UI_PREFIX
from apifray.proxy import ProxyServer, RuleSet
from apifray.report import parse_machine_report
from apifray.session import EventLog, Origin, SessionStore

from upstream_stub import StubUpstream

TOKEN = "trusty-test-token"
PAIR = b'{"a": 1, "b": 2}'
ROUTES = {
    "/pair": (200, [("Content-Type", "application/json")], PAIR),
    "/plain": (200, [("Content-Type", "text/plain")], b"hello"),
}


@pytest.fixture()
def stack():
    events = EventLog()
    store = SessionStore()
    rules = RuleSet(events)
    stub = StubUpstream(ROUTES).start()
    proxy = ProxyServer(store, rules, events).start()
    control = ControlServer(store, rules, events, token=TOKEN).start()
    ns = SimpleNamespace(
        events=events, store=store, rules=rules, stub=stub, proxy=proxy, control=control
    )
    try:
        yield ns
    finally:
        control.stop()
        proxy.stop()
        stub.stop()


def api(stack, method, path, body=None, token=TOKEN):
    host, port = stack.control.address
    conn = http.client.HTTPConnection(host, port, timeout=10)
    headers = {}
    if token is not None:
        headers["Authorization"] = f"Bearer {token}"
    payload = None
    if body is not None:
        payload = json.dumps(body).encode()
        headers["Content-Type"] = "application/json"
    try:
        conn.request(method, API_PREFIX + path, body=payload, headers=headers)
        resp = conn.getresponse()
        raw = resp.read()
        content_type = resp.getheader("Content-Type", "")
    finally:
        conn.close()
    if content_type.startswith("application/json") and raw:
        return resp.status, json.loads(raw)
    return resp.status, raw


def via_proxy(stack, path):
    host, port = stack.proxy.address
    conn = http.client.HTTPConnection(host, port, timeout=10)
    try:
        conn.request("GET", f"http://127.0.0.1:{stack.stub.port}{path}")
        resp = conn.getresponse()
        return resp.status, resp.read()
    finally:
        conn.close()


def capture_baseline(stack, path="/pair"):
    """Create a rule, arm it, prime it with one proxied fetch."""
    status, rule = api(stack, "POST", "/rules", {"matcher": {"path": path}})
    assert status == 201
    status, _ = api(stack, "POST", f"/rules/{rule['id']}/capture-next")
    assert status == 200
    via_proxy(stack, path)
    status, armed = api(stack, "GET", f"/rules/{rule['id']}")
    assert status == 200 and armed["baseline"] is not None
    return armed


# ---------------------------------------------------------------------------
# Authentication
# ---------------------------------------------------------------------------

def test_endpoints_require_the_bearer_token(stack):
    status, body = api(stack, "GET", "/flows", token=None)
    assert status == 401 and body["record"] == "error"
    status, _ = api(stack, "GET", "/flows", token="wrong")
    assert status == 401
    status, body = api(stack, "GET", "/flows")
    assert status == 200 and body["record"] == "flow-page"


def test_server_refuses_to_start_without_a_token():
    with pytest.raises(ValueError, match="token"):
        ControlServer(SessionStore(), RuleSet(), EventLog(), token="")


def test_ui_is_token_free(stack):
    host, port = stack.control.address
    conn = http.client.HTTPConnection(host, port, timeout=10)
    try:
        conn.request("GET", UI_PREFIX + "/")
        resp = conn.getresponse()
        body = resp.read()
        assert resp.status == 200
        assert b"<!doctype html>" in body.lower()
    finally:
        conn.close()


def test_ui_rejects_path_traversal(stack):
    host, port = stack.control.address
    conn = http.client.HTTPConnection(host, port, timeout=10)
    try:
        conn.request("GET", UI_PREFIX + "/../control.py")
        resp = conn.getresponse()
        resp.read()
        assert resp.status == 404
    finally:
        conn.close()


def test_ui_serves_a_real_bundle_when_present(tmp_path):
    (tmp_path / "index.html").write_text("<!doctype html><p>bundle")
    (tmp_path / "app.js").write_text("console.log(1)")
    control = ControlServer(
        SessionStore(), RuleSet(), EventLog(), token=TOKEN, ui_root=tmp_path
    ).start()
    try:
        host, port = control.address
        conn = http.client.HTTPConnection(host, port, timeout=10)
        conn.request("GET", UI_PREFIX + "/")
        resp = conn.getresponse()
        assert b"bundle" in resp.read()
        conn.request("GET", UI_PREFIX + "/app.js")
        resp = conn.getresponse()
        assert resp.getheader("Content-Type", "").startswith("text/javascript") or resp.getheader(
            "Content-Type", ""
        ).startswith("application/javascript")
        assert resp.read() == b"console.log(1)"
        conn.close()
    finally:
        control.stop()


# ---------------------------------------------------------------------------
# Flows
# ---------------------------------------------------------------------------

def test_flow_paging_and_single_lookup(stack):
    for _ in range(5):
        via_proxy(stack, "/pair")
    status, page = api(stack, "GET", "/flows?limit=2&offset=1")
    assert status == 200
    assert page["total"] == 5 and page["offset"] == 1 and page["limit"] == 2
    assert [f["id"] for f in page["flows"]] == [2, 3]
    assert all(f["record"] == "exchange" for f in page["flows"])

    status, flow = api(stack, "GET", "/flows/3")
    assert status == 200 and flow["id"] == 3 and flow["record"] == "exchange"
    status, _ = api(stack, "GET", "/flows/999")
    assert status == 404
    status, _ = api(stack, "GET", "/flows/abc")
    assert status == 404


# ---------------------------------------------------------------------------
# Rules
# ---------------------------------------------------------------------------

def test_rule_lifecycle_over_http(stack):
    status, rule = api(stack, "POST", "/rules", {"matcher": {"path": "/pair"}})
    assert status == 201
    assert rule["rule_id"] == rule["id"]
    assert rule["mode"] == "pass_through" and rule["baseline"] is None

    status, listing = api(stack, "GET", "/rules")
    assert status == 200 and len(listing["rules"]) == 1

    status, body = api(stack, "PATCH", f"/rules/{rule['id']}", {"mode": "rewrite"})
    assert status == 409  # no baseline yet

    status, body = api(stack, "PATCH", f"/rules/{rule['id']}", {"bogus": 1})
    assert status == 400

    status, body = api(stack, "DELETE", f"/rules/{rule['id']}")
    assert status == 200 and body["record"] == "rule-deleted"
    status, _ = api(stack, "DELETE", f"/rules/{rule['id']}")
    assert status == 404

    kinds = [e.kind for e in stack.events.since(0)]
    assert kinds.count("rule-changed") == 2  # created and deleted; refused changes are silent


def test_new_rule_cannot_start_in_rewrite_mode(stack):
    status, body = api(
        stack,
        "POST",
        "/rules",
        {
            "matcher": {"path": "/pair"},
            "mode": "rewrite",
            "mutation": {"kind": "empty_response"},
        },
    )
    assert status == 409
    assert "capture" in body["message"]


def test_rule_creation_validates_bodies(stack):
    status, _ = api(stack, "POST", "/rules", {})
    assert status == 400
    status, _ = api(stack, "POST", "/rules", {"matcher": {"path": ""}})
    assert status == 400
    status, _ = api(stack, "POST", "/rules", {"matcher": {"path": "/x"}, "mode": "warp"})
    assert status == 400
    status, _ = api(
        stack, "POST", "/rules", {"matcher": {"path": "/x"}, "mutation": {"kind": "nope"}}
    )
    assert status == 400
    status, _ = api(
        stack, "POST", "/rules", {"matcher": {"path": "/x"}, "marker_edit": {"path": "/t"}}
    )
    assert status == 400


def test_capture_then_rewrite_over_http(stack):
    armed = capture_baseline(stack)
    assert armed["mode"] == "pass_through"  # capture completed and disarmed itself
    assert armed["baseline"]["body_bytes"] == len(PAIR)

    status, rule = api(
        stack,
        "PATCH",
        f"/rules/{armed['id']}",
        {"mode": "rewrite", "mutation": {"kind": "field_removal", "targets": ["/b"]}},
    )
    assert status == 200 and rule["mode"] == "rewrite"

    proxy_status, body = via_proxy(stack, "/pair")
    assert proxy_status == 200 and body == b'{"a":1}'

    status, flow = api(stack, "GET", f"/flows/{len(stack.store.exchanges)}")
    assert flow["origin"] == "mutated_local" and flow["rule_id"] == armed["id"]


def test_rule_targets_come_from_the_baseline(stack):
    status, rule = api(stack, "POST", "/rules", {"matcher": {"path": "/pair"}})
    assert status == 201
    status, body = api(stack, "GET", f"/rules/{rule['id']}/targets")
    assert status == 409  # nothing captured yet

    api(stack, "POST", f"/rules/{rule['id']}/capture-next")
    via_proxy(stack, "/pair")
    status, body = api(stack, "GET", f"/rules/{rule['id']}/targets")
    assert status == 200
    assert body["targets"] == ["/a", "/b"]


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------

def _mutated_flow(stack):
    armed = capture_baseline(stack)
    api(
        stack,
        "PATCH",
        f"/rules/{armed['id']}",
        {"mode": "rewrite", "mutation": {"kind": "empty_response"}},
    )
    via_proxy(stack, "/pair")
    return len(stack.store.exchanges)


def test_observation_round_trip(stack):
    flow_id = _mutated_flow(stack)
    status, obs = api(
        stack,
        "POST",
        "/observations",
        {
            "exchange_id": flow_id,
            "behavior": "error_message",
            "note": "toast shown",
            "window_seconds": 0.01,
        },
    )
    assert status == 201
    assert obs["record"] == "observation"
    assert obs["behavior"] == "error_message"
    # the mutation fell back to the serving rule's active spec
    assert obs["mutation"] == {"kind": "empty_response"}
    assert obs["auto_signals"]["retry_count"] == 0
    assert stack.store.observations[0].note == "toast shown"


def test_observation_errors(stack):
    status, _ = api(
        stack, "POST", "/observations", {"exchange_id": 999, "behavior": "error_message"}
    )
    assert status == 404

    via_proxy(stack, "/pair")  # plain upstream flow, not mutated
    status, body = api(
        stack,
        "POST",
        "/observations",
        {"exchange_id": len(stack.store.exchanges), "behavior": "error_message"},
    )
    assert status == 409

    flow_id = _mutated_flow(stack)
    status, _ = api(
        stack, "POST", "/observations", {"exchange_id": flow_id, "behavior": "melted"}
    )
    assert status == 400
    status, _ = api(
        stack,
        "POST",
        "/observations",
        {"exchange_id": flow_id, "behavior": "error_message", "surprise": 1},
    )
    assert status == 400


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------

def test_profile_patch_upserts_and_lists(stack):
    status, page = api(stack, "GET", "/profiles")
    assert status == 200 and page["profiles"] == []

    status, profile = api(
        stack,
        "PATCH",
        "/profiles/%2Fpair",
        {
            "caching": "none",
            "versioning": {"scheme": "url_path", "token": "v1"},
            "notes": "weather backend",
        },
    )
    assert status == 200
    assert profile["target_name"] == "/pair"
    assert profile["caching"] == "none"
    assert profile["versioning"] == {"scheme": "url_path", "token": "v1"}

    status, profile = api(stack, "PATCH", "/profiles/%2Fpair", {"caching_suspected": True})
    assert status == 200 and profile["caching_suspected"] is True
    assert profile["caching"] == "none"  # earlier fields survive a partial patch

    status, page = api(stack, "GET", "/profiles")
    assert [p["target_name"] for p in page["profiles"]] == ["/pair"]
    assert "profile-changed" in [e.kind for e in stack.events.since(0)]


def test_profile_patch_validation(stack):
    status, _ = api(stack, "PATCH", "/profiles/%2Fx", {})
    assert status == 400
    status, _ = api(stack, "PATCH", "/profiles/%2Fx", {"caching": "psychic"})
    assert status == 400
    status, _ = api(stack, "PATCH", "/profiles/%2Fx", {"versioning": {"scheme": "url_path"}})
    assert status == 400  # a detected scheme needs its token
    status, _ = api(stack, "PATCH", "/profiles/%2Fx", {"unknown_field": 1})
    assert status == 400


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

def test_report_formats(stack):
    flow_id = _mutated_flow(stack)
    api(
        stack,
        "POST",
        "/observations",
        {"exchange_id": flow_id, "behavior": "error_message", "window_seconds": 0.01},
    )
    api(stack, "PATCH", "/profiles/%2Fpair", {"caching": "none"})

    status, markdown = api(stack, "GET", "/report?format=markdown")
    assert status == 200
    text = markdown.decode()
    assert "# Fragility Report" in text
    assert "### /pair" in text
    assert "| Empty Response | 1 |" in text

    status, plain = api(stack, "GET", "/report?format=text")
    assert status == 200 and plain.decode().startswith("FRAGILITY REPORT")

    status, machine = api(stack, "GET", "/report?format=machine")
    assert status == 200
    report = parse_machine_report(machine)
    assert report.target_count == 1

    status, _ = api(stack, "GET", "/report?format=carrier-pigeon")
    assert status == 400


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

def _open_stream(stack, since=0, timeout=5.0):
    host, port = stack.control.address
    conn = http.client.HTTPConnection(host, port, timeout=timeout)
    conn.request(
        "GET",
        API_PREFIX + f"/events?since={since}",
        headers={"Authorization": f"Bearer {TOKEN}"},
    )
    resp = conn.getresponse()
    assert resp.status == 200
    assert resp.getheader("Content-Type") == "application/x-ndjson"
    return conn, resp


def test_event_stream_replays_and_follows(stack):
    status, rule = api(stack, "POST", "/rules", {"matcher": {"path": "/pair"}})
    conn, resp = _open_stream(stack, since=0)
    try:
        first = json.loads(resp.readline())
        assert first["record"] == "event"
        assert first["id"] == 1
        assert first["kind"] == "rule-changed"  # replayed from before the connection

        via_proxy(stack, "/pair")  # happens while the stream is open
        seen = [first]
        while seen[-1]["kind"] != "flow-recorded":
            seen.append(json.loads(resp.readline()))
        ids = [e["id"] for e in seen]
        assert ids == sorted(ids) and len(set(ids)) == len(ids)
    finally:
        conn.close()


def test_event_stream_since_skips_history(stack):
    api(stack, "POST", "/rules", {"matcher": {"path": "/pair"}})
    last = stack.events.since(0)[-1].id
    conn, resp = _open_stream(stack, since=last)
    try:
        via_proxy(stack, "/pair")
        event = json.loads(resp.readline())
        assert event["id"] > last
        assert event["kind"] == "flow-recorded"
    finally:
        conn.close()


def test_events_require_token(stack):
    host, port = stack.control.address
    conn = http.client.HTTPConnection(host, port, timeout=10)
    try:
        conn.request("GET", API_PREFIX + "/events")
        assert conn.getresponse().status == 401
    finally:
        conn.close()


# ---------------------------------------------------------------------------
# Port separation
# ---------------------------------------------------------------------------

def test_control_endpoints_do_not_exist_on_the_proxy_port(stack):
    host, port = stack.proxy.address
    conn = http.client.HTTPConnection(host, port, timeout=10)
    try:
        conn.request(
            "GET",
            API_PREFIX + "/flows",
            headers={"Host": f"127.0.0.1:{stack.stub.port}"},
        )
        resp = conn.getresponse()
        body = resp.read()
        # the proxy treats it as plain upstream traffic; the stub has no such route
        assert resp.status == 404
        assert b"flow-page" not in body
    finally:
        conn.close()


def test_proxying_is_refused_on_the_control_port(stack):
    host, port = stack.control.address
    conn = http.client.HTTPConnection(host, port, timeout=10)
    try:
        conn.request("GET", f"http://127.0.0.1:{stack.stub.port}/pair")
        resp = conn.getresponse()
        resp.read()
        assert resp.status == 404
    finally:
        conn.close()

    with socket.create_connection((host, port), timeout=5) as sock:
        sock.sendall(b"CONNECT example.com:443 HTTP/1.1\r\nHost: example.com\r\n\r\n")
        reply = sock.recv(1024)
    assert b"501" in reply.split(b"\r\n", 1)[0]


def test_profile_book_hands_out_snapshots():
    book = ProfileBook()
    stored = book.upsert("/x", notes="first")
    stored.notes = "tampered"
    assert book.get("/x").notes == "first"
