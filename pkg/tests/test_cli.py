"""CLI: usage errors, client commands, offline report, replay, serve, campaign."""

from __future__ import annotations

import http.client
import json
import os
import re
import signal
import socket
import subprocess
import sys
import threading
import time
from pathlib import Path
from types import SimpleNamespace

import pytest

from apifray.cli import main
from apifray.control import ControlServer
from apifray.mutation import spec_from_dict
from apifray.proxy import ProxyServer, RuleSet
from apifray.report import parse_machine_report
from apifray.session import (
    Behavior,
    EventLog,
    ObservationRecord,
    Origin,
    RequestRecord,
    ResponseRecord,
    SessionStore,
)

from upstream_stub import StubUpstream

REPO_ROOT = Path(__file__).resolve().parents[1]
TOKEN = "cli-test-token"
PAIR = b'{"a": 1, "b": 2}'
ROUTES = {
    "/pair": (200, [("Content-Type", "application/json")], PAIR),
    "/plain": (200, [("Content-Type", "text/plain")], b"hello"),
}


def _free_ports(count: int) -> list[int]:
    socks = [socket.socket() for _ in range(count)]
    try:
        for s in socks:
            s.bind(("127.0.0.1", 0))
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()


def _control(address: str, token: str, method: str, path: str, body=None):
    host, _, port = address.rpartition(":")
    conn = http.client.HTTPConnection(host, int(port), timeout=10)
    headers = {"Authorization": f"Bearer {token}"}
    payload = None
    if body is not None:
        payload = json.dumps(body).encode()
        headers["Content-Type"] = "application/json"
    try:
        conn.request(method, "/__control/v1" + path, body=payload, headers=headers)
        resp = conn.getresponse()
        raw = resp.read()
        content_type = resp.getheader("Content-Type", "")
    finally:
        conn.close()
    if content_type.startswith("application/json") and raw:
        return resp.status, json.loads(raw)
    return resp.status, raw


def _proxy_fetch(proxy_address: tuple[str, int], stub_port: int, path: str):
    conn = http.client.HTTPConnection(*proxy_address, timeout=10)
    try:
        conn.request("GET", f"http://127.0.0.1:{stub_port}{path}")
        resp = conn.getresponse()
        return resp.status, resp.read()
    finally:
        conn.close()


@pytest.fixture()
def stack():
    events = EventLog()
    store = SessionStore()
    rules = RuleSet(events)
    stub = StubUpstream(ROUTES).start()
    proxy = ProxyServer(store, rules, events).start()
    control = ControlServer(store, rules, events, token=TOKEN).start()
    host, port = control.address
    ns = SimpleNamespace(
        events=events,
        store=store,
        rules=rules,
        stub=stub,
        proxy=proxy,
        control=control,
        control_addr=f"{host}:{port}",
    )
    try:
        yield ns
    finally:
        control.stop()
        proxy.stop()
        stub.stop()


def _client_args(stack) -> list[str]:
    return ["--control", stack.control_addr, "--token", TOKEN]


# ---------------------------------------------------------------------------
# Usage errors: exit 1, message on stderr
# ---------------------------------------------------------------------------

def test_no_subcommand_is_a_usage_error(capsys):
    assert main([]) == 1
    err = capsys.readouterr().err
    assert "usage" in err and "error" in err


def test_unknown_subcommand_is_a_usage_error(capsys):
    assert main(["frobnicate"]) == 1
    assert "invalid choice" in capsys.readouterr().err


def test_mutate_needs_a_kind_or_off(capsys):
    assert main(["mutate", "--path", "/x", "--token", "t"]) == 1
    assert "--kind" in capsys.readouterr().err


def test_mutate_off_rejects_mutation_flags(capsys):
    args = ["mutate", "--path", "/x", "--off", "--kind", "empty_response", "--token", "t"]
    assert main(args) == 1
    assert "--off" in capsys.readouterr().err


def test_observe_rejects_unknown_behavior(capsys):
    args = ["observe", "--exchange", "1", "--behavior", "shrugged", "--token", "t"]
    assert main(args) == 1
    assert "invalid choice" in capsys.readouterr().err


def test_client_commands_require_a_token(capsys):
    assert main(["capture", "--path", "/x"]) == 1
    assert "control token" in capsys.readouterr().err


def test_bad_listen_address_is_a_usage_error(capsys):
    assert main(["serve", "--listen", "nonsense", "--duration", "0.01"]) == 1
    assert "--listen" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    assert "serve" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# Runtime errors: exit 2
# ---------------------------------------------------------------------------

def test_unreachable_control_api_exits_two(capsys):
    args = ["capture", "--path", "/x", "--control", "127.0.0.1:1", "--token", "t"]
    assert main(args) == 2
    assert "not reachable" in capsys.readouterr().err


def test_report_on_missing_session_exits_two(tmp_path, capsys):
    assert main(["report", "--session", str(tmp_path / "absent.session")]) == 2
    assert "error:" in capsys.readouterr().err


def test_observe_unknown_exchange_exits_two(stack, capsys):
    args = ["observe", "--exchange", "999", "--behavior", "error_message", *_client_args(stack)]
    assert main(args) == 2
    assert "404" in capsys.readouterr().err


def test_campaign_run_with_missing_plan_exits_two(tmp_path, capsys):
    assert main(["campaign", "run", str(tmp_path / "no-plan.json")]) == 2
    assert "cannot read plan" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# Client commands against a live control API
# ---------------------------------------------------------------------------

def test_capture_mutate_observe_flow(stack, capsys):
    assert main(["capture", "--path", "/pair", *_client_args(stack)]) == 0
    assert "armed" in capsys.readouterr().out

    status, body = _proxy_fetch(stack.proxy.address, stack.stub.port, "/pair")
    assert (status, body) == (200, PAIR)

    args = [
        "mutate",
        "--kind",
        "empty_response",
        "--host",
        "api.example.com",
        "--path",
        "/pair",
        *_client_args(stack),
    ]
    assert main(args) == 0
    captured = capsys.readouterr()
    assert "rewriting /pair with empty_response" in captured.out
    assert "--host is informational" in captured.err

    # the spec'd contract: the rule is visible over GET /rules afterwards
    status, listing = _control(stack.control_addr, TOKEN, "GET", "/rules")
    assert status == 200
    assert [r["mode"] for r in listing["rules"]] == ["rewrite"]
    assert listing["rules"][0]["mutation"] == {"kind": "empty_response"}

    status, body = _proxy_fetch(stack.proxy.address, stack.stub.port, "/pair")
    assert body == b""
    mutated = [e for e in stack.store.exchanges if e.origin is Origin.MUTATED_LOCAL]
    assert len(mutated) == 1

    observe = [
        "observe",
        "--exchange",
        str(mutated[0].id),
        "--behavior",
        "silent_failure",
        "--note",
        "spinner stuck",
        "--window",
        "4.5",
        *_client_args(stack),
    ]
    assert main(observe) == 0
    line = json.loads(capsys.readouterr().out)
    assert line["behavior"] == "silent_failure"
    assert stack.store.observations[0].note == "spinner stuck"

    assert main(["mutate", "--off", "--path", "/pair", *_client_args(stack)]) == 0
    status, body = _proxy_fetch(stack.proxy.address, stack.stub.port, "/pair")
    assert body == PAIR


def test_mutate_without_baseline_arms_capture(stack, capsys):
    args = ["mutate", "--kind", "empty_response", "--path", "/plain", *_client_args(stack)]
    assert main(args) == 0
    assert "capture armed" in capsys.readouterr().out
    status, listing = _control(stack.control_addr, TOKEN, "GET", "/rules")
    assert listing["rules"][0]["mode"] == "capture_next"

    _proxy_fetch(stack.proxy.address, stack.stub.port, "/plain")
    assert main(args) == 0
    assert "rewriting /plain" in capsys.readouterr().out
    status, body = _proxy_fetch(stack.proxy.address, stack.stub.port, "/plain")
    assert body == b""


def test_client_flags_can_come_from_a_config_file(stack, tmp_path, capsys):
    cfg = tmp_path / "apifray.json"
    cfg.write_text(json.dumps({"control_listen": stack.control_addr, "control_token": TOKEN}))
    assert main(["capture", "--path", "/pair", "--config", str(cfg)]) == 0
    assert "armed" in capsys.readouterr().out


def test_live_report_over_the_control_api(stack, capsys):
    main(["capture", "--path", "/pair", *_client_args(stack)])
    _proxy_fetch(stack.proxy.address, stack.stub.port, "/pair")
    main(["mutate", "--kind", "empty_response", "--path", "/pair", *_client_args(stack)])
    _proxy_fetch(stack.proxy.address, stack.stub.port, "/pair")
    mutated = [e for e in stack.store.exchanges if e.origin is Origin.MUTATED_LOCAL]
    main(
        [
            "observe",
            "--exchange",
            str(mutated[0].id),
            "--behavior",
            "silent_failure",
            *_client_args(stack),
        ]
    )
    capsys.readouterr()

    assert main(["report", *_client_args(stack)]) == 0
    out = capsys.readouterr().out
    assert "# Fragility Report" in out
    assert "| Empty Response | 1 |" in out

    assert main(["report", "--format", "machine", *_client_args(stack)]) == 0
    report = parse_machine_report(capsys.readouterr().out.encode())
    assert report.target_count == 1


# ---------------------------------------------------------------------------
# Offline report and replay from a session file
# ---------------------------------------------------------------------------

def _write_session(path: Path) -> None:
    store = SessionStore(stream_path=path)
    store.add_exchange(
        RequestRecord(method="GET", target="/v1/thing?x=1"),
        ResponseRecord(
            status=200,
            reason="OK",
            headers=(("Content-Type", "application/json"), ("X-Custom", "kept")),
            body=PAIR,
        ),
        origin=Origin.UPSTREAM,
    )
    store.add_exchange(
        RequestRecord(method="GET", target="/v1/thing?x=1"),
        ResponseRecord(status=200, body=b""),
        origin=Origin.MUTATED_LOCAL,
        rule_id=1,
    )
    store.add_observation(
        ObservationRecord(
            exchange_id=2,
            behavior=Behavior.SILENT_FAILURE,
            mutation=spec_from_dict({"kind": "empty_response"}),
            note="spinner stuck",
        )
    )
    store.close()


def test_offline_report_from_session_file(tmp_path, capsys):
    session = tmp_path / "run.session"
    _write_session(session)

    assert main(["report", "--session", str(session)]) == 0
    out = capsys.readouterr().out
    assert "# Fragility Report" in out
    assert "### /v1/thing" in out
    assert "| Empty Response | 1 |" in out

    assert main(["report", "--format", "text", "--session", str(session)]) == 0
    assert "FRAGILITY REPORT" in capsys.readouterr().out

    assert main(["report", "--format", "machine", "--session", str(session)]) == 0
    report = parse_machine_report(capsys.readouterr().out.encode())
    assert report.target_count == 1


def test_report_out_writes_a_file(tmp_path, capsys):
    session = tmp_path / "run.session"
    _write_session(session)
    out_file = tmp_path / "report.md"
    assert main(["report", "--session", str(session), "--out", str(out_file)]) == 0
    assert "report written to" in capsys.readouterr().out
    assert b"# Fragility Report" in out_file.read_bytes()


def test_replay_serves_stored_responses(tmp_path):
    session = tmp_path / "run.session"
    _write_session(session)
    port = _free_ports(1)[0]
    result: list[int] = []
    args = [
        "replay",
        "--session",
        str(session),
        "--exchange",
        "1",
        "--listen",
        f"127.0.0.1:{port}",
        "--duration",
        "3.0",
    ]
    thread = threading.Thread(target=lambda: result.append(main(args)))
    thread.start()
    try:
        deadline = time.monotonic() + 5.0
        while time.monotonic() < deadline:
            try:
                conn = http.client.HTTPConnection("127.0.0.1", port, timeout=1)
                conn.request("GET", "/v1/thing")
                resp = conn.getresponse()
                break
            except OSError:
                time.sleep(0.05)
        else:
            pytest.fail("replay server never came up")
        body = resp.read()
        assert resp.status == 200
        assert body == PAIR
        assert resp.getheader("X-Custom") == "kept"
        conn.close()

        conn = http.client.HTTPConnection("127.0.0.1", port, timeout=2)
        conn.request("GET", "/elsewhere")
        resp = conn.getresponse()
        assert resp.status == 404
        assert b"no stored response" in resp.read()
        conn.close()

        # replay answers any method with the stored response
        conn = http.client.HTTPConnection("127.0.0.1", port, timeout=2)
        conn.request("POST", "/v1/thing", body=b"ping")
        resp = conn.getresponse()
        assert resp.status == 200 and resp.read() == PAIR
        conn.close()
    finally:
        thread.join(timeout=10)
    assert result == [0]


def test_replay_unknown_exchange_exits_two(tmp_path, capsys):
    session = tmp_path / "run.session"
    _write_session(session)
    args = ["replay", "--session", str(session), "--exchange", "99"]
    assert main(args) == 2
    assert "no exchange 99" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------

def test_serve_runs_for_duration_and_prints_addresses(capsys):
    args = [
        "serve",
        "--listen",
        "127.0.0.1:0",
        "--control-listen",
        "127.0.0.1:0",
        "--duration",
        "0.3",
    ]
    assert main(args) == 0
    out = capsys.readouterr().out
    assert "proxy listening on 127.0.0.1:" in out
    assert "/__control/v1/" in out
    assert "control token: " in out


def test_serve_uses_config_token(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(
        json.dumps(
            {
                "listen": "127.0.0.1:0",
                "control_listen": "127.0.0.1:0",
                "control_token": "from-config-token",
            }
        )
    )
    assert main(["serve", "--config", str(cfg), "--duration", "0.2"]) == 0
    assert "control token: from-config-token" in capsys.readouterr().out


def test_serve_subprocess_answers_and_stops_on_sigint(tmp_path):
    session = tmp_path / "live.session"
    stub = StubUpstream(ROUTES).start()
    env = dict(os.environ)
    env["PYTHONPATH"] = "src"
    proc = subprocess.Popen(
        [
            sys.executable,
            "-m",
            "apifray",
            "serve",
            "--listen",
            "127.0.0.1:0",
            "--control-listen",
            "127.0.0.1:0",
            "--session",
            str(session),
        ],
        cwd=REPO_ROOT,
        env=env,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
    )
    try:
        lines: list[str] = []
        deadline = time.monotonic() + 15.0
        token = None
        while time.monotonic() < deadline:
            line = proc.stdout.readline()
            if not line:
                break
            lines.append(line.strip())
            if line.startswith("control token: "):
                token = line.split(": ", 1)[1].strip()
                break
        assert token, f"no token line; saw {lines}"
        proxy_addr = lines[0].rsplit(" ", 1)[1]
        match = re.search(r"http://([0-9.]+):(\d+)/", lines[1])
        assert match, lines[1]
        control_addr = f"{match.group(1)}:{match.group(2)}"

        status, hello = _control(control_addr, token, "GET", "/")
        assert status == 200 and hello["record"] == "control"

        phost, _, pport = proxy_addr.rpartition(":")
        status, body = _proxy_fetch((phost, int(pport)), stub.port, "/pair")
        assert (status, body) == (200, PAIR)

        status, page = _control(control_addr, token, "GET", "/flows")
        assert status == 200 and page["total"] == 1

        proc.send_signal(signal.SIGINT)
        assert proc.wait(timeout=10) == 0
    finally:
        if proc.poll() is None:
            proc.kill()
            proc.wait(timeout=10)
        stub.stop()

    records = [json.loads(line) for line in session.read_text().splitlines()]
    assert records[0]["record"] == "header"
    assert any(r["record"] == "exchange" for r in records)


# ---------------------------------------------------------------------------
# campaign run
# ---------------------------------------------------------------------------

def test_campaign_run_end_to_end(tmp_path, capsys):
    plan_file = tmp_path / "sweep.plan"
    plan_file.write_text(
        json.dumps(
            {
                "name": "pair-sweep",
                "matcher": {"path": "/pair"},
                "steps": [
                    {"kind": "field_removal", "escalation_level": 1},
                    {"kind": "empty_response"},
                ],
                "per_step_wait": 5.0,
            }
        )
    )
    session = tmp_path / "sweep.session"
    stub = StubUpstream(ROUTES).start()
    proxy_port, control_port = _free_ports(2)
    control_addr = f"127.0.0.1:{control_port}"
    args = [
        "campaign",
        "run",
        str(plan_file),
        "--listen",
        f"127.0.0.1:{proxy_port}",
        "--control-listen",
        control_addr,
        "--token",
        TOKEN,
        "--session",
        str(session),
        "--capture-timeout",
        "10",
    ]
    result: list[int] = []
    runner = threading.Thread(target=lambda: result.append(main(args)))
    runner.start()
    observed: set[int] = set()
    try:
        deadline = time.monotonic() + 5.0
        while time.monotonic() < deadline:
            try:
                status, _ = _control(control_addr, TOKEN, "GET", "/rules")
                if status == 200:
                    break
            except OSError:
                time.sleep(0.05)
        else:
            pytest.fail("campaign control API never came up")

        # act as the client under test: keep using the API, report every
        # mutated response as an explicit error message
        watchdog = time.monotonic() + 30.0
        while runner.is_alive() and time.monotonic() < watchdog:
            try:
                _proxy_fetch(("127.0.0.1", proxy_port), stub.port, "/pair")
                status, page = _control(
                    control_addr, TOKEN, "GET", "/flows?offset=0&limit=500"
                )
                if status == 200:
                    for flow in page["flows"]:
                        if flow["origin"] == "mutated_local" and flow["id"] not in observed:
                            code, _ = _control(
                                control_addr,
                                TOKEN,
                                "POST",
                                "/observations",
                                {"exchange_id": flow["id"], "behavior": "error_message"},
                            )
                            if code == 201:
                                observed.add(flow["id"])
            except OSError:
                pass
            time.sleep(0.08)
    finally:
        runner.join(timeout=30)
    assert not runner.is_alive(), "campaign run never finished"
    assert result == [0]
    out = capsys.readouterr().out
    assert "step 0 started: field_removal" in out
    assert "step 0 ended: ok (observed)" in out
    assert "step 1 ended: ok (observed)" in out
    assert "plan pair-sweep completed" in out
    assert "campaign 'pair-sweep' finished: 2 ok, 0 failed, 0 without client action" in out
    assert "2 observations recorded" in out
    assert len(observed) == 2

    records = [json.loads(line) for line in session.read_text().splitlines()]
    assert sum(1 for r in records if r["record"] == "observation") == 2
    stub.stop()
