"""HTTP control surface: flows, rules, observations, profiles, reports, events.

Runs on its own listener, never on the proxy port. Every endpoint lives
under /__control/v1/ and requires the static bearer token; the dashboard
assets under /__control/ui/ are the one token-free corner, since the page
has to load before it can ask its user for a token.

Request and response bodies reuse the session-file record syntax, so a
record fished out of an API response round-trips through the same codecs
as a session file line.
"""

from __future__ import annotations

import json
import mimetypes
import secrets
import threading
from dataclasses import replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, unquote, urlsplit

from .campaign import (
    CachingVerdict,
    NotMutated,
    TargetProfile,
    UnknownExchange,
    VersioningInfo,
    VersioningScheme,
    record_observation,
)
from .document import enumerate_removal_targets, parse
from .mutation import MutationFailed, spec_from_dict, spec_to_dict
from .proxy import MarkerEdit, Matcher, Rule, RuleMode, RuleSet, matcher_from_dict
from .report import ReportFormat, aggregate, observations_by_endpoint, render_report
from .session import (
    Behavior,
    EventLog,
    SessionStore,
    exchange_to_dict,
    observation_to_dict,
)

API_PREFIX = "/__control/v1"
UI_PREFIX = "/__control/ui"

MAX_PAGE_SIZE = 500
DEFAULT_PAGE_SIZE = 50

_REPORT_MEDIA = {
    ReportFormat.PLAIN_TEXT: "text/plain; charset=utf-8",
    ReportFormat.MARKDOWN: "text/markdown; charset=utf-8",
    ReportFormat.MACHINE: "application/x-ndjson",
}


class ProfileBook:
    """Mutable per-target annotations, keyed by target name."""

    def __init__(self, events: EventLog | None = None):
        self._lock = threading.RLock()
        self._profiles: dict[str, TargetProfile] = {}
        self._events = events

    def get(self, name: str) -> TargetProfile | None:
        with self._lock:
            profile = self._profiles.get(name)
            return replace(profile) if profile else None

    def list(self) -> list[TargetProfile]:
        with self._lock:
            return [replace(self._profiles[name]) for name in sorted(self._profiles)]

    def as_mapping(self) -> dict[str, TargetProfile]:
        with self._lock:
            return {name: replace(p) for name, p in self._profiles.items()}

    def upsert(self, name: str, **changes) -> TargetProfile:
        allowed = {"caching", "caching_suspected", "versioning", "notes"}
        bad = set(changes) - allowed
        if bad:
            raise ValueError(f"cannot update profile fields {sorted(bad)}")
        with self._lock:
            current = self._profiles.get(name) or TargetProfile(target_name=name)
            for field, value in changes.items():
                setattr(current, field, value)
            self._profiles[name] = current
            if self._events is not None:
                self._events.append("profile-changed", {"target_name": name})
            return replace(current)


def rule_to_dict(rule: Rule) -> dict:
    """API representation of a rule; the baseline body stays in its flow."""
    baseline = None
    if rule.baseline is not None:
        baseline = {
            "exchange_id": rule.baseline.exchange_id,
            "status": rule.baseline.status,
            "format": rule.baseline.format.value,
            "body_bytes": len(rule.baseline.body),
        }
    marker = None
    if rule.marker_edit is not None:
        marker = {"path": rule.marker_edit.path, "sentinel": rule.marker_edit.sentinel}
    return {
        "record": "rule",
        "id": rule.id,
        "matcher": rule.matcher.to_dict(),
        "mode": rule.mode.value,
        "mutation": spec_to_dict(rule.mutation) if rule.mutation is not None else None,
        "forward_and_discard": rule.forward_and_discard,
        "marker_edit": marker,
        "baseline": baseline,
    }


class _ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


class _ControlHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, handler, control: "ControlServer"):
        super().__init__(address, handler)
        self.control = control


class ControlServer:
    """The control API listener; start() returns once it accepts connections."""

    def __init__(
        self,
        store: SessionStore,
        rules: RuleSet,
        events: EventLog,
        profiles: ProfileBook | None = None,
        token: str = "",
        address: tuple[str, int] = ("127.0.0.1", 0),
        ui_root: str | Path | None = None,
    ):
        if not token:
            raise ValueError("the control API requires a non-empty bearer token")
        self.store = store
        self.rules = rules
        self.events = events
        self.profiles = profiles if profiles is not None else ProfileBook(events)
        self.token = token
        self.ui_root = Path(ui_root) if ui_root is not None else _default_ui_root()
        self.shutting_down = False
        self._server = _ControlHTTPServer(address, _ControlHandler, self)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._server.server_address[:2]
        return str(host), int(port)

    def start(self) -> "ControlServer":
        thread = threading.Thread(
            target=lambda: self._server.serve_forever(poll_interval=0.05),
            name="control-server",
            daemon=True,
        )
        thread.start()
        self._thread = thread
        return self

    def stop(self) -> None:
        self.shutting_down = True  # lets open event streams drain out
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def __enter__(self) -> "ControlServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()


def _default_ui_root() -> Path:
    return Path(__file__).parent / "ui"


_PLACEHOLDER_PAGE = b"""<!doctype html>
<meta charset="utf-8">
<title>apifray</title>
<p>No dashboard bundle is installed. The control API lives under
<code>/__control/v1/</code> and answers to the bearer token printed at startup.</p>
"""


class _ControlHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True  # sub-second event stream latency
    server: _ControlHTTPServer

    def log_message(self, *args) -> None:
        pass

    def do_GET(self) -> None:
        self._method()

    do_POST = do_PATCH = do_DELETE = do_GET

    @property
    def control(self) -> ControlServer:
        return self.server.control

    def _method(self) -> None:
        try:
            split = urlsplit(self.path)
            path = split.path
            if path == UI_PREFIX or path.startswith(UI_PREFIX + "/"):
                self._serve_ui(path[len(UI_PREFIX) :].lstrip("/"))
            elif path == API_PREFIX or path.startswith(API_PREFIX + "/"):
                if not self._authorized():
                    self._send_error(401, "missing or incorrect bearer token")
                else:
                    try:
                        self._dispatch(path[len(API_PREFIX) :], split.query)
                    except _ApiError as exc:
                        self._send_error(exc.status, exc.message)
            else:
                self._send_error(404, "not found")
        except (BrokenPipeError, ConnectionResetError):
            self.close_connection = True

    def _authorized(self) -> bool:
        header = self.headers.get("Authorization", "")
        expected = f"Bearer {self.control.token}"
        return secrets.compare_digest(header.encode(), expected.encode())

    # -- plumbing ------------------------------------------------------------

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error(self, status: int, message: str) -> None:
        self._send_json(status, {"record": "error", "status": status, "message": message})

    def _read_json(self) -> dict:
        length_header = self.headers.get("Content-Length")
        try:
            length = int(length_header or "")
        except ValueError:
            raise _ApiError(400, "request body requires Content-Length") from None
        raw = self.rfile.read(length)
        try:
            data = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise _ApiError(400, "request body is not valid JSON") from None
        if not isinstance(data, dict):
            raise _ApiError(400, "request body must be a JSON object")
        return data

    def _query_int(self, params: dict, name: str, default: int, minimum: int, maximum: int) -> int:
        if name not in params:
            return default
        try:
            value = int(params[name][-1])
        except ValueError:
            raise _ApiError(400, f"{name} must be an integer") from None
        return max(minimum, min(maximum, value))

    # -- routing --------------------------------------------------------------

    def _dispatch(self, rest: str, query: str) -> None:
        params = parse_qs(query, keep_blank_values=True)
        segments = [s for s in rest.split("/") if s]

        if not segments:
            self._expect("GET")
            self._send_json(200, {"record": "control", "version": 1})
        elif segments == ["flows"]:
            self._expect("GET")
            self._flow_page(params)
        elif len(segments) == 2 and segments[0] == "flows":
            self._expect("GET")
            self._single_flow(segments[1])
        elif segments == ["rules"]:
            if self.command == "GET":
                rules = [rule_to_dict(r) for r in self.control.rules.list()]
                self._send_json(200, {"record": "rule-page", "rules": rules})
            elif self.command == "POST":
                self._create_rule(self._read_json())
            else:
                self._send_error(405, "method not allowed")
        elif len(segments) == 2 and segments[0] == "rules":
            self._rule_by_id(segments[1])
        elif len(segments) == 3 and segments[0] == "rules" and segments[2] == "capture-next":
            self._expect("POST")
            self._capture_next(segments[1])
        elif len(segments) == 3 and segments[0] == "rules" and segments[2] == "targets":
            self._expect("GET")
            self._rule_targets(segments[1])
        elif segments == ["observations"]:
            self._expect("POST")
            self._create_observation(self._read_json())
        elif segments == ["profiles"]:
            self._expect("GET")
            profiles = [
                {"record": "profile", **p.to_dict()} for p in self.control.profiles.list()
            ]
            self._send_json(200, {"record": "profile-page", "profiles": profiles})
        elif rest.startswith("/profiles/"):
            self._expect("PATCH")
            name = unquote(rest[len("/profiles/") :])
            self._patch_profile(name, self._read_json())
        elif segments == ["report"]:
            self._expect("GET")
            self._report(params)
        elif segments == ["events"]:
            self._expect("GET")
            self._stream_events(params)
        else:
            self._send_error(404, "not found")

    def _expect(self, method: str) -> None:
        if self.command != method:
            raise _ApiError(405, "method not allowed")

    def _int_id(self, raw: str) -> int:
        try:
            return int(raw)
        except ValueError:
            raise _ApiError(404, f"no such id {raw!r}") from None

    # -- flows -----------------------------------------------------------------

    def _flow_page(self, params: dict) -> None:
        flows = self.control.store.exchanges
        offset = self._query_int(params, "offset", 0, 0, 10**9)
        limit = self._query_int(params, "limit", DEFAULT_PAGE_SIZE, 1, MAX_PAGE_SIZE)
        page = flows[offset : offset + limit]
        self._send_json(
            200,
            {
                "record": "flow-page",
                "total": len(flows),
                "offset": offset,
                "limit": limit,
                "flows": [exchange_to_dict(e) for e in page],
            },
        )

    def _single_flow(self, raw_id: str) -> None:
        exchange = self.control.store.get_exchange(self._int_id(raw_id))
        if exchange is None:
            raise _ApiError(404, f"no flow {raw_id}")
        self._send_json(200, exchange_to_dict(exchange))

    # -- rules -----------------------------------------------------------------

    def _parse_rule_fields(self, data: dict, *, creating: bool) -> dict:
        allowed = {"matcher", "mode", "mutation", "forward_and_discard", "marker_edit"}
        unknown = set(data) - allowed
        if unknown:
            raise _ApiError(400, f"unknown rule fields: {sorted(unknown)}")
        fields: dict = {}
        if "matcher" in data or creating:
            try:
                fields["matcher"] = matcher_from_dict(data.get("matcher"))
            except ValueError as exc:
                raise _ApiError(400, str(exc)) from None
        if "mode" in data:
            try:
                fields["mode"] = RuleMode(data["mode"])
            except ValueError:
                raise _ApiError(400, f"unknown mode {data['mode']!r}") from None
        if "mutation" in data:
            if data["mutation"] is None:
                fields["mutation"] = None
            else:
                try:
                    fields["mutation"] = spec_from_dict(data["mutation"])
                except MutationFailed as exc:
                    raise _ApiError(400, str(exc)) from None
        if "forward_and_discard" in data:
            if not isinstance(data["forward_and_discard"], bool):
                raise _ApiError(400, "forward_and_discard must be a boolean")
            fields["forward_and_discard"] = data["forward_and_discard"]
        if "marker_edit" in data:
            raw = data["marker_edit"]
            if raw is None:
                fields["marker_edit"] = None
            elif (
                isinstance(raw, dict)
                and set(raw) == {"path", "sentinel"}
                and all(isinstance(raw[k], str) for k in ("path", "sentinel"))
            ):
                fields["marker_edit"] = MarkerEdit(raw["path"], raw["sentinel"])
            else:
                raise _ApiError(400, "marker_edit needs 'path' and 'sentinel' strings")
        return fields

    def _create_rule(self, data: dict) -> None:
        fields = self._parse_rule_fields(data, creating=True)
        mode = fields.get("mode", RuleMode.PASS_THROUGH)
        if mode is RuleMode.REWRITE:
            # a fresh rule has no baseline yet, so rewrite cannot be its start state
            raise _ApiError(409, "a new rule cannot start in rewrite mode; capture first")
        rule = self.control.rules.add(
            fields["matcher"],
            mode=mode,
            mutation=fields.get("mutation"),
            forward_and_discard=fields.get("forward_and_discard", False),
            marker_edit=fields.get("marker_edit"),
        )
        self._send_json(201, {**rule_to_dict(rule), "rule_id": rule.id})

    def _rule_by_id(self, raw_id: str) -> None:
        rule_id = self._int_id(raw_id)
        if self.command == "GET":
            rule = self.control.rules.get(rule_id)
            if rule is None:
                raise _ApiError(404, f"no rule {rule_id}")
            self._send_json(200, rule_to_dict(rule))
        elif self.command == "PATCH":
            fields = self._parse_rule_fields(self._read_json(), creating=False)
            if not fields:
                raise _ApiError(400, "no rule fields to change")
            try:
                rule = self.control.rules.update(rule_id, **fields)
            except KeyError:
                raise _ApiError(404, f"no rule {rule_id}") from None
            except ValueError as exc:
                raise _ApiError(409, str(exc)) from None
            self._send_json(200, rule_to_dict(rule))
        elif self.command == "DELETE":
            if not self.control.rules.delete(rule_id):
                raise _ApiError(404, f"no rule {rule_id}")
            self._send_json(200, {"record": "rule-deleted", "rule_id": rule_id})
        else:
            raise _ApiError(405, "method not allowed")

    def _capture_next(self, raw_id: str) -> None:
        rule_id = self._int_id(raw_id)
        try:
            rule = self.control.rules.arm_capture(rule_id)
        except KeyError:
            raise _ApiError(404, f"no rule {rule_id}") from None
        self._send_json(200, rule_to_dict(rule))

    def _rule_targets(self, raw_id: str) -> None:
        rule_id = self._int_id(raw_id)
        rule = self.control.rules.get(rule_id)
        if rule is None:
            raise _ApiError(404, f"no rule {rule_id}")
        if rule.baseline is None:
            raise _ApiError(409, "rule has no baseline to enumerate targets from")
        try:
            tree = parse(rule.baseline.body, rule.baseline.format)
        except Exception:
            raise _ApiError(409, "baseline body is not a parseable document") from None
        targets = [p.render() for p in enumerate_removal_targets(tree)]
        self._send_json(
            200, {"record": "targets", "rule_id": rule_id, "targets": targets}
        )

    # -- observations ------------------------------------------------------------

    def _create_observation(self, data: dict) -> None:
        allowed = {
            "exchange_id",
            "behavior",
            "note",
            "mutation",
            "window_seconds",
            "client_aborted",
        }
        unknown = set(data) - allowed
        if unknown:
            raise _ApiError(400, f"unknown observation fields: {sorted(unknown)}")
        try:
            exchange_id = int(data["exchange_id"])
            behavior = Behavior(data["behavior"])
        except (KeyError, TypeError, ValueError):
            raise _ApiError(400, "observation needs exchange_id and a valid behavior") from None
        note = data.get("note", "")
        if not isinstance(note, str):
            raise _ApiError(400, "note must be a string")
        window = data.get("window_seconds", 5.0)
        if isinstance(window, bool) or not isinstance(window, (int, float)) or window < 0:
            raise _ApiError(400, "window_seconds must be a non-negative number")
        aborted = data.get("client_aborted", False)
        if not isinstance(aborted, bool):
            raise _ApiError(400, "client_aborted must be a boolean")

        mutation = None
        if data.get("mutation") is not None:
            try:
                mutation = spec_from_dict(data["mutation"])
            except MutationFailed as exc:
                raise _ApiError(400, str(exc)) from None
        else:
            # convenience: fall back to the spec of the rule that served the flow
            exchange = self.control.store.get_exchange(exchange_id)
            if exchange is not None and exchange.rule_id is not None:
                rule = self.control.rules.get(exchange.rule_id)
                if rule is not None:
                    mutation = rule.mutation

        try:
            observation = record_observation(
                self.control.store,
                exchange_id,
                behavior,
                note=note,
                mutation=mutation,
                window_seconds=float(window),
                client_aborted=aborted,
            )
        except UnknownExchange:
            raise _ApiError(404, f"no flow {exchange_id}") from None
        except NotMutated as exc:
            raise _ApiError(409, str(exc)) from None
        self._send_json(201, observation_to_dict(observation))

    # -- profiles ------------------------------------------------------------------

    def _patch_profile(self, name: str, data: dict) -> None:
        if not name:
            raise _ApiError(404, "profile name missing")
        allowed = {"caching", "caching_suspected", "versioning", "notes"}
        unknown = set(data) - allowed
        if unknown:
            raise _ApiError(400, f"unknown profile fields: {sorted(unknown)}")
        changes: dict = {}
        if "caching" in data:
            try:
                changes["caching"] = CachingVerdict(data["caching"])
            except ValueError:
                raise _ApiError(400, f"unknown caching verdict {data['caching']!r}") from None
        if "caching_suspected" in data:
            if not isinstance(data["caching_suspected"], bool):
                raise _ApiError(400, "caching_suspected must be a boolean")
            changes["caching_suspected"] = data["caching_suspected"]
        if "versioning" in data:
            raw = data["versioning"]
            if not isinstance(raw, dict) or set(raw) - {"scheme", "token"}:
                raise _ApiError(400, "versioning needs 'scheme' and optional 'token'")
            try:
                changes["versioning"] = VersioningInfo(
                    scheme=VersioningScheme(raw.get("scheme", "none_detected")),
                    token=str(raw.get("token", "")),
                )
            except ValueError as exc:
                raise _ApiError(400, str(exc)) from None
        if "notes" in data:
            if not isinstance(data["notes"], str):
                raise _ApiError(400, "notes must be a string")
            changes["notes"] = data["notes"]
        if not changes:
            raise _ApiError(400, "no profile fields to change")
        profile = self.control.profiles.upsert(name, **changes)
        self._send_json(200, {"record": "profile", **profile.to_dict()})

    # -- report ---------------------------------------------------------------------

    def _report(self, params: dict) -> None:
        raw_format = params.get("format", ["markdown"])[-1]
        try:
            fmt = ReportFormat(raw_format)
        except ValueError:
            raise _ApiError(400, f"unknown report format {raw_format!r}") from None
        grouped = observations_by_endpoint(self.control.store)
        try:
            report = aggregate(grouped, self.control.profiles.as_mapping())
        except ValueError as exc:
            raise _ApiError(409, f"session cannot be aggregated: {exc}") from None
        body = render_report(report, fmt)
        self.send_response(200)
        self.send_header("Content-Type", _REPORT_MEDIA[fmt])
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    # -- events ------------------------------------------------------------------------

    def _stream_events(self, params: dict) -> None:
        cursor = self._query_int(params, "since", 0, 0, 10**12)
        self.send_response(200)
        self.send_header("Content-Type", "application/x-ndjson")
        self.send_header("Cache-Control", "no-store")
        self.send_header("Connection", "close")
        self.end_headers()
        self.close_connection = True
        while not self.control.shutting_down:
            pending = self.control.events.wait_for(cursor, timeout=0.25)
            for event in pending:
                line = json.dumps({"record": "event", **event.to_dict()}) + "\n"
                self.wfile.write(line.encode("utf-8"))
                cursor = event.id
            if pending:
                self.wfile.flush()

    # -- dashboard assets -----------------------------------------------------------------

    def _serve_ui(self, relative: str) -> None:
        if self.command != "GET":
            self._send_error(405, "method not allowed")
            return
        name = relative or "index.html"
        root = self.control.ui_root
        candidate = (root / name).resolve()
        if root.is_dir() and (candidate == root.resolve() or root.resolve() in candidate.parents):
            if candidate.is_file():
                media = mimetypes.guess_type(candidate.name)[0] or "application/octet-stream"
                body = candidate.read_bytes()
                self.send_response(200)
                self.send_header("Content-Type", media)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)
                return
        if name == "index.html":
            self.send_response(200)
            self.send_header("Content-Type", "text/html; charset=utf-8")
            self.send_header("Content-Length", str(len(_PLACEHOLDER_PAGE)))
            self.end_headers()
            self.wfile.write(_PLACEHOLDER_PAGE)
            return
        self._send_error(404, "not found")
