"""Command-line front end.

Seven subcommands. `serve` and `campaign run` host the proxy and control API
in the foreground; `capture`, `mutate`, and `observe` are thin clients of a
running control API; `report` and `replay` also work offline from a session
file. Exit codes: 0 success, 1 command-line misuse, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import threading
from http.client import HTTPConnection
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .campaign import DEFAULT_CAPTURE_TIMEOUT, CampaignError, load_plan, run_campaign
from .config import Config, ConfigError, generate_token, load_config, parse_address
from .control import API_PREFIX, UI_PREFIX, ControlServer, ProfileBook
from .mutation import MutationKind
from .proxy import ProxyServer, RuleSet
from .report import ReportFormat, aggregate, observations_by_endpoint, render_report
from .session import Behavior, EventLog, SessionFormatError, SessionStore


class UsageError(Exception):
    """Bad command line; exits 1 with the message on standard error."""


class CommandError(Exception):
    """The command itself failed; exits 2."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on misuse by default; this CLI reserves 2 for
    # runtime failures, so parse errors are rerouted through UsageError
    def error(self, message: str):
        raise UsageError(f"{self.format_usage().rstrip()}\n{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

def _address_or_usage(flag: str, value: str) -> tuple[str, int]:
    try:
        return parse_address(value)
    except ConfigError as exc:
        raise UsageError(f"{flag}: {exc}") from None


def _client_config(args: argparse.Namespace) -> tuple[str, str]:
    """Resolve control address and token from flags, falling back to --config."""
    cfg = load_config(args.config) if args.config else Config()
    address = args.control or cfg.control_listen
    if args.control:
        _address_or_usage("--control", args.control)
    token = args.token or cfg.control_token
    if not token:
        raise UsageError(
            "a control token is required: pass --token or a --config file with control_token"
        )
    return address, token


def _api(
    address: str,
    token: str,
    method: str,
    path: str,
    payload: object = None,
    timeout: float = 10.0,
) -> object:
    """One control-API call. JSON responses come back decoded, others as bytes."""
    host, port = parse_address(address)
    conn = HTTPConnection(host, port, timeout=timeout)
    headers = {"Authorization": f"Bearer {token}"}
    body = None
    if payload is not None:
        body = json.dumps(payload).encode("utf-8")
        headers["Content-Type"] = "application/json"
    try:
        conn.request(method, API_PREFIX + path, body=body, headers=headers)
        response = conn.getresponse()
        raw = response.read()
        status = response.status
        content_type = response.getheader("Content-Type", "")
    except OSError as exc:
        raise CommandError(f"control API at {address} is not reachable: {exc}") from None
    finally:
        conn.close()
    parsed: object = raw
    if content_type.startswith("application/json"):
        parsed = json.loads(raw.decode("utf-8")) if raw else {}
    if status >= 400:
        detail = parsed.get("message", "") if isinstance(parsed, dict) else ""
        raise CommandError(f"{method} {path} failed: {status} {detail}".rstrip(), status=status)
    return parsed


def _matcher_payload(args: argparse.Namespace) -> dict:
    matcher: dict = {"path": args.path}
    if args.method is not None:
        matcher["method"] = args.method
    if args.query is not None:
        matcher["query"] = args.query
    return matcher


def _find_or_create_rule(address: str, token: str, matcher: dict) -> dict:
    listing = _api(address, token, "GET", "/rules")
    assert isinstance(listing, dict)
    for entry in listing["rules"]:
        if entry["matcher"] == matcher:
            return entry
    created = _api(address, token, "POST", "/rules", {"matcher": matcher})
    assert isinstance(created, dict)
    return created


def _wait(duration: float | None) -> None:
    """Block until interrupted, or for the given number of seconds."""
    try:
        threading.Event().wait(duration)
    except KeyboardInterrupt:
        pass


class _Stack:
    """Proxy plus control API, shared by `serve` and `campaign run`."""

    def __init__(self, cfg: Config, token: str):
        self.cfg = cfg
        self.token = token
        self.store = SessionStore(stream_path=cfg.session_path)
        self.events = EventLog()
        self.rules = RuleSet(self.events)
        host, port = parse_address(cfg.listen)
        chost, cport = parse_address(cfg.control_listen)
        # bind failures surface before any thread starts; on error the
        # process exits, so the partially bound socket is reclaimed there
        try:
            self.proxy = ProxyServer(
                self.store,
                self.rules,
                self.events,
                host=host,
                port=port,
                upstream_timeout=cfg.upstream_timeout_seconds,
            )
        except OSError as exc:
            raise CommandError(f"cannot bind proxy on {cfg.listen}: {exc}") from None
        try:
            self.control = ControlServer(
                self.store,
                self.rules,
                self.events,
                profiles=ProfileBook(self.events),
                token=token,
                address=(chost, cport),
            )
        except OSError as exc:
            raise CommandError(f"cannot bind control API on {cfg.control_listen}: {exc}") from None

    def start_and_announce(self) -> None:
        self.proxy.start()
        self.control.start()
        phost, pport = self.proxy.address
        chost, cport = self.control.address
        print(f"proxy listening on {phost}:{pport}", flush=True)
        print(f"control api at http://{chost}:{cport}{API_PREFIX}/", flush=True)
        print(f"dashboard at http://{chost}:{cport}{UI_PREFIX}/", flush=True)
        print(f"control token: {self.token}", flush=True)
        if self.cfg.session_path is not None:
            print(f"session file: {self.cfg.session_path}", flush=True)

    def stop(self) -> None:
        self.control.stop()
        self.proxy.stop()
        self.store.close()


def _serving_config(args: argparse.Namespace) -> Config:
    for flag, value in (("--listen", args.listen), ("--control-listen", args.control_listen)):
        if value is not None:
            _address_or_usage(flag, value)
    cfg = load_config(args.config) if args.config else Config()
    return cfg.with_overrides(
        listen=args.listen,
        control_listen=args.control_listen,
        session_path=args.session,
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_serve(args: argparse.Namespace) -> int:
    cfg = _serving_config(args)
    token = cfg.control_token or generate_token()
    stack = _Stack(cfg, token)
    try:
        stack.start_and_announce()
        _wait(args.duration)
    finally:
        stack.stop()
    return 0


def cmd_capture(args: argparse.Namespace) -> int:
    address, token = _client_config(args)
    matcher = _matcher_payload(args)
    rule = _find_or_create_rule(address, token, matcher)
    _api(address, token, "POST", f"/rules/{rule['id']}/capture-next")
    print(f"rule {rule['id']} armed: the next response matching {args.path} becomes its baseline")
    return 0


def cmd_mutate(args: argparse.Namespace) -> int:
    spec_flags = (args.kind, args.target, args.level, args.added, args.status, args.seed)
    if args.off and any(value is not None for value in spec_flags):
        raise UsageError("--off clears the rule; it takes no mutation flags")
    if not args.off and args.kind is None:
        raise UsageError("pick a mutation with --kind, or --off to clear one")
    if args.host is not None:
        # rules match on path alone; the host is not part of the matcher
        print("note: --host is informational; matching uses only the path", file=sys.stderr)

    address, token = _client_config(args)
    matcher = _matcher_payload(args)
    rule = _find_or_create_rule(address, token, matcher)
    rule_id = rule["id"]

    if args.off:
        _api(address, token, "PATCH", f"/rules/{rule_id}", {"mode": "pass_through", "mutation": None})
        print(f"rule {rule_id}: mutation cleared, passing through")
        return 0

    spec: dict = {"kind": args.kind}
    if args.target:
        spec["targets"] = list(args.target)
    if args.level is not None:
        spec["escalation_level"] = args.level
    if args.added is not None:
        spec["added_count"] = args.added
    if args.status is not None:
        spec["status_override"] = args.status
    if args.seed is not None:
        spec["seed"] = args.seed
    _api(address, token, "PATCH", f"/rules/{rule_id}", {"mutation": spec})
    try:
        _api(address, token, "PATCH", f"/rules/{rule_id}", {"mode": "rewrite"})
    except CommandError as exc:
        if exc.status == 409:
            # no baseline yet; arm a capture so the next live response provides one
            _api(address, token, "POST", f"/rules/{rule_id}/capture-next")
            print(
                f"rule {rule_id}: no baseline yet, capture armed; "
                f"rerun mutate after the next response on {args.path}"
            )
            return 0
        raise
    print(f"rule {rule_id} rewriting {args.path} with {args.kind}")
    return 0


def cmd_observe(args: argparse.Namespace) -> int:
    address, token = _client_config(args)
    payload: dict = {"exchange_id": args.exchange, "behavior": args.behavior}
    if args.note:
        payload["note"] = args.note
    if args.window is not None:
        payload["window_seconds"] = args.window
    if args.aborted:
        payload["client_aborted"] = True
    recorded = _api(address, token, "POST", "/observations", payload)
    print(json.dumps(recorded))
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    if args.session is not None:
        store = SessionStore.load(args.session)
        try:
            report = aggregate(observations_by_endpoint(store))
        except ValueError as exc:
            raise CommandError(f"cannot aggregate session: {exc}") from None
        body = render_report(report, ReportFormat(args.format))
    else:
        address, token = _client_config(args)
        fetched = _api(address, token, "GET", f"/report?format={args.format}")
        body = fetched if isinstance(fetched, bytes) else json.dumps(fetched).encode("utf-8")
    if args.out is not None:
        Path(args.out).write_bytes(body)
        print(f"report written to {args.out}")
    else:
        sys.stdout.write(body.decode("utf-8"))
        sys.stdout.flush()
    return 0


def _step_line(data: dict) -> str:
    status = data.get("status", "")
    step = data.get("step")
    if status == "started":
        return f"step {step} started: {data.get('kind', '?')}"
    if status == "failed":
        return f"step {step} failed: {data.get('error', '')}"
    if status == "ended":
        suffix = " (observed)" if data.get("observed") else ""
        return f"step {step} ended: {data.get('outcome', '')}{suffix}"
    if status == "completed":
        return f"plan {data.get('plan', '')} completed"
    return f"campaign event: {data}"


def cmd_campaign_run(args: argparse.Namespace) -> int:
    plan = load_plan(args.plan)
    cfg = _serving_config(args)
    token = args.token or cfg.control_token or generate_token()
    stack = _Stack(cfg, token)
    try:
        stack.start_and_announce()
        run = run_campaign(
            plan,
            stack.rules,
            stack.store,
            stack.events,
            capture_timeout=args.capture_timeout,
        )
        cursor = 0
        try:
            while True:
                for event in stack.events.wait_for(cursor, timeout=0.2):
                    cursor = event.id
                    if event.kind == "campaign-step":
                        print(_step_line(event.data), flush=True)
                if run.finished and not stack.events.since(cursor):
                    break
        except KeyboardInterrupt:
            raise CommandError("interrupted before the plan finished") from None
    finally:
        stack.stop()
    if run.error is not None:
        raise CommandError(f"campaign aborted: {run.error}")
    ok = sum(1 for r in run.results if r.status == "ok")
    failed = sum(1 for r in run.results if r.status == "failed")
    idle = sum(1 for r in run.results if r.status == "no_client_action")
    print(
        f"campaign '{plan.name}' finished: {ok} ok, {failed} failed, "
        f"{idle} without client action",
        flush=True,
    )
    print(f"{len(stack.store.observations)} observations recorded", flush=True)
    if cfg.session_path is not None:
        print(f"session appended to {cfg.session_path}", flush=True)
    return 0


# headers send_response emits itself, plus framing the replay recomputes
_REPLAY_SKIP = {"content-length", "transfer-encoding", "connection", "date", "server"}


class _ReplayServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], routes: dict):
        super().__init__(address, _ReplayHandler)
        self.routes = routes


class _ReplayHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True
    server: _ReplayServer

    def log_message(self, fmt: str, *args: object) -> None:
        pass

    def _replay(self) -> None:
        length = int(self.headers.get("Content-Length") or 0)
        if length > 0:
            self.rfile.read(length)
        path = self.path.partition("?")[0]
        exchange = self.server.routes.get(path)
        if exchange is None:
            body = json.dumps(
                {"record": "error", "status": 404, "message": f"no stored response for {path}"}
            ).encode("utf-8")
            self.send_response(404)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
            return
        response = exchange.response
        self.send_response(response.status, response.reason or None)
        for name, value in response.headers:
            if name.lower() in _REPLAY_SKIP:
                continue
            self.send_header(name, value)
        self.send_header("Content-Length", str(len(response.body)))
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(response.body)

    def _safe(self) -> None:
        try:
            self._replay()
        except (BrokenPipeError, ConnectionResetError):
            pass

    do_GET = do_POST = do_PUT = do_PATCH = do_DELETE = do_HEAD = do_OPTIONS = _safe


def cmd_replay(args: argparse.Namespace) -> int:
    store = SessionStore.load(args.session)
    routes: dict = {}
    for exchange_id in args.exchange:
        exchange = store.get_exchange(exchange_id)
        if exchange is None:
            raise CommandError(f"session has no exchange {exchange_id}")
        routes[exchange.request.target.partition("?")[0]] = exchange
    host, port = _address_or_usage("--listen", args.listen)
    try:
        server = _ReplayServer((host, port), routes)
    except OSError as exc:
        raise CommandError(f"cannot bind replay server on {args.listen}: {exc}") from None
    thread = threading.Thread(
        target=server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True
    )
    thread.start()
    rhost, rport = server.server_address[:2]
    print(f"replaying {len(routes)} stored response(s) on {rhost}:{rport}", flush=True)
    for path, exchange in sorted(routes.items()):
        print(
            f"  {exchange.request.method} {path} -> {exchange.response.status} "
            f"({len(exchange.response.body)} bytes)",
            flush=True,
        )
    try:
        _wait(args.duration)
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5.0)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _client_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--control", metavar="HOST:PORT", help="control API address (default 127.0.0.1:8900)"
    )
    parser.add_argument("--token", help="control API bearer token")
    parser.add_argument("--config", metavar="FILE", help="configuration file")


def _matcher_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--path", required=True, help="exact request path to match")
    parser.add_argument("--method", help="narrow the match to one HTTP method")
    parser.add_argument("--query", help="narrow the match to one exact query string")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="apifray",
        description=(
            "Robustness-testing proxy: capture baselines, serve mutated API responses, "
            "and grade how clients react."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    serve = sub.add_parser("serve", help="run the proxy and control API in the foreground")
    serve.add_argument("--listen", metavar="HOST:PORT", help="proxy address (default 127.0.0.1:8888)")
    serve.add_argument(
        "--control-listen", metavar="HOST:PORT", help="control API address (default 127.0.0.1:8900)"
    )
    serve.add_argument("--session", metavar="FILE", help="append records to FILE as they happen")
    serve.add_argument("--config", metavar="FILE", help="configuration file")
    serve.add_argument(
        "--duration",
        type=float,
        metavar="SECONDS",
        help="stop after this many seconds (default: run until interrupted)",
    )
    serve.set_defaults(handler=cmd_serve)

    capture = sub.add_parser("capture", help="arm a one-shot baseline capture for a matcher")
    _matcher_flags(capture)
    _client_flags(capture)
    capture.set_defaults(handler=cmd_capture)

    mutate = sub.add_parser("mutate", help="activate a mutation on responses matching a path")
    _matcher_flags(mutate)
    mutate.add_argument("--host", help="upstream host, noted for the operator; matching uses only the path")
    mutate.add_argument("--kind", choices=[k.value for k in MutationKind], help="mutation operator")
    mutate.add_argument(
        "--target",
        action="append",
        metavar="FIELD_PATH",
        help="field path such as /user/name; repeatable",
    )
    mutate.add_argument("--level", type=int, help="escalation ladder rung for field removal")
    mutate.add_argument("--added", type=int, help="how many fields field addition injects")
    mutate.add_argument("--status", type=int, help="override the served status code")
    mutate.add_argument("--seed", type=int, help="seed for generated field names")
    mutate.add_argument("--off", action="store_true", help="clear the mutation and pass through")
    _client_flags(mutate)
    mutate.set_defaults(handler=cmd_mutate)

    observe = sub.add_parser("observe", help="record how the client visibly reacted to an exchange")
    observe.add_argument("--exchange", type=int, required=True, metavar="ID", help="exchange id")
    observe.add_argument(
        "--behavior", required=True, choices=[b.value for b in Behavior], help="observed reaction"
    )
    observe.add_argument("--note", default="", help="free-form context for the report")
    observe.add_argument(
        "--window", type=float, metavar="SECONDS", help="how long the tester watched before deciding"
    )
    observe.add_argument("--aborted", action="store_true", help="the client gave up on the connection")
    _client_flags(observe)
    observe.set_defaults(handler=cmd_observe)

    report = sub.add_parser("report", help="aggregate observations into a fragility report")
    report.add_argument(
        "--format",
        choices=[f.value for f in ReportFormat],
        default=ReportFormat.MARKDOWN.value,
        help="output format (default markdown)",
    )
    report.add_argument(
        "--session", metavar="FILE", help="read this session file instead of a running control API"
    )
    report.add_argument("--out", metavar="FILE", help="write the report here instead of stdout")
    _client_flags(report)
    report.set_defaults(handler=cmd_report)

    campaign = sub.add_parser("campaign", help="scripted mutation sequences")
    campaign_sub = campaign.add_subparsers(dest="campaign_command", required=True, metavar="subcommand")
    run_parser = campaign_sub.add_parser(
        "run", help="host the stack and serve a plan's mutation steps in order"
    )
    run_parser.add_argument("plan", metavar="PLAN_FILE", help="campaign plan, a JSON file")
    run_parser.add_argument("--listen", metavar="HOST:PORT", help="proxy address")
    run_parser.add_argument("--control-listen", metavar="HOST:PORT", help="control API address")
    run_parser.add_argument("--session", metavar="FILE", help="append records to FILE")
    run_parser.add_argument("--config", metavar="FILE", help="configuration file")
    run_parser.add_argument("--token", help="control API bearer token (default: generated)")
    run_parser.add_argument(
        "--capture-timeout",
        type=float,
        default=DEFAULT_CAPTURE_TIMEOUT,
        metavar="SECONDS",
        help="how long to wait for a baseline before giving up",
    )
    run_parser.set_defaults(handler=cmd_campaign_run)

    replay = sub.add_parser("replay", help="serve stored responses as a standalone mock upstream")
    replay.add_argument("--session", required=True, metavar="FILE", help="session file to read")
    replay.add_argument(
        "--exchange",
        action="append",
        type=int,
        required=True,
        metavar="ID",
        help="exchange id to replay; repeatable",
    )
    replay.add_argument("--listen", metavar="HOST:PORT", default="127.0.0.1:0")
    replay.add_argument(
        "--duration",
        type=float,
        metavar="SECONDS",
        help="stop after this many seconds (default: run until interrupted)",
    )
    replay.set_defaults(handler=cmd_replay)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (CommandError, ConfigError, CampaignError, SessionFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
