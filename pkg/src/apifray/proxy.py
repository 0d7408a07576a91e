"""The interception proxy.

Sits between a client and its API, forwarding traffic verbatim until a rule
says otherwise. Rules match requests, capture baselines, and serve mutated
variants; everything served is recorded as an exchange. Transparency is the
default posture: with no rules armed, a client must not be able to tell the
proxy is there (bodies byte-identical, headers preserved apart from
hop-by-hop ones).

Both proxy styles work: absolute-URI targets (a configured HTTP proxy) and
origin-form targets with a Host header (DNS/hosts-file redirection). HTTPS
is tunneled blind via CONNECT, not intercepted.
"""

from __future__ import annotations

import enum
import gzip
import http.client
import json
import socket
import threading
import zlib
from dataclasses import dataclass, replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import urlsplit

from .document import (
    DocumentFormat,
    MalformedDocument,
    detect_format,
    parse,
    parse_path,
    serialize,
)
from .mutation import (
    MutationFailed,
    MutationSpec,
    apply_marker,
    apply_mutation,
)
from .session import (
    EventLog,
    Origin,
    RequestRecord,
    ResponseRecord,
    SessionStore,
)

DEFAULT_UPSTREAM_TIMEOUT = 30.0

_HOP_BY_HOP = frozenset(
    {
        "connection",
        "keep-alive",
        "proxy-authenticate",
        "proxy-authorization",
        "te",
        "trailer",
        "transfer-encoding",
        "upgrade",
        "proxy-connection",
    }
)


def strip_hop_by_hop(headers: list[tuple[str, str]]) -> list[tuple[str, str]]:
    """Drop hop-by-hop headers, including those nominated by Connection."""
    nominated: set[str] = set()
    for name, value in headers:
        if name.lower() == "connection":
            nominated.update(t.strip().lower() for t in value.split(",") if t.strip())
    banned = _HOP_BY_HOP | nominated
    return [(n, v) for n, v in headers if n.lower() not in banned]


def get_header(headers: list[tuple[str, str]] | tuple, name: str) -> str | None:
    lowered = name.lower()
    for n, v in headers:
        if n.lower() == lowered:
            return v
    return None


def decode_body(body: bytes, content_encoding: str | None) -> bytes | None:
    """Undo gzip/deflate; None means the encoding cannot be reversed here."""
    encoding = (content_encoding or "identity").strip().lower()
    if encoding in ("identity", ""):
        return body
    try:
        if encoding in ("gzip", "x-gzip"):
            return gzip.decompress(body)
        if encoding == "deflate":
            try:
                return zlib.decompress(body)
            except zlib.error:
                return zlib.decompress(body, -zlib.MAX_WBITS)
    except (OSError, zlib.error):
        return None
    return None


# ---------------------------------------------------------------------------
# Rules
# ---------------------------------------------------------------------------

class RuleMode(str, enum.Enum):
    PASS_THROUGH = "pass_through"
    CAPTURE_NEXT = "capture_next"
    REWRITE = "rewrite"


@dataclass(frozen=True)
class Matcher:
    """Request selector. Path is mandatory and exact; method and query
    narrow the match and raise specificity."""

    path: str
    method: str | None = None
    query: str | None = None

    def specificity(self) -> int:
        return (2 if self.query is not None else 0) + (1 if self.method is not None else 0)

    def matches(self, method: str, path: str, query: str) -> bool:
        if self.path != path:
            return False
        if self.method is not None and self.method.upper() != method.upper():
            return False
        if self.query is not None and self.query != query:
            return False
        return True

    def to_dict(self) -> dict:
        out: dict = {"path": self.path}
        if self.method is not None:
            out["method"] = self.method
        if self.query is not None:
            out["query"] = self.query
        return out


def matcher_from_dict(data: object) -> Matcher:
    """Strict inverse of Matcher.to_dict."""
    if not isinstance(data, dict):
        raise ValueError("matcher must be an object")
    unknown = set(data) - {"path", "method", "query"}
    if unknown:
        raise ValueError(f"unknown matcher fields: {sorted(unknown)}")
    path = data.get("path")
    if not isinstance(path, str) or not path:
        raise ValueError("matcher requires a non-empty 'path'")
    method = data.get("method")
    if method is not None and not isinstance(method, str):
        raise ValueError("matcher 'method' must be a string")
    query = data.get("query")
    if query is not None and not isinstance(query, str):
        raise ValueError("matcher 'query' must be a string")
    return Matcher(path=path, method=method, query=query)


@dataclass(frozen=True)
class Baseline:
    """A captured response a rule can replay and mutate."""

    status: int
    reason: str
    headers: tuple[tuple[str, str], ...]
    body: bytes
    format: DocumentFormat
    exchange_id: int


@dataclass(frozen=True)
class MarkerEdit:
    """Cache-probe edit: overwrite the value at `path` with `sentinel`."""

    path: str
    sentinel: str


@dataclass
class Rule:
    id: int
    matcher: Matcher
    mode: RuleMode = RuleMode.PASS_THROUGH
    mutation: MutationSpec | None = None
    forward_and_discard: bool = False
    marker_edit: MarkerEdit | None = None
    baseline: Baseline | None = None


class RuleSet:
    """All rules, with atomic mode transitions.

    Reads hand out snapshots, so a serving thread acts on one consistent
    view of a rule while the control API mutates the live object.
    """

    def __init__(self, events: EventLog | None = None):
        self._lock = threading.RLock()
        self._rules: dict[int, Rule] = {}
        self._next_id = 1
        self._events = events or EventLog()

    def add(
        self,
        matcher: Matcher,
        mode: RuleMode = RuleMode.PASS_THROUGH,
        mutation: MutationSpec | None = None,
        forward_and_discard: bool = False,
        marker_edit: MarkerEdit | None = None,
    ) -> Rule:
        with self._lock:
            rule = Rule(
                id=self._next_id,
                matcher=matcher,
                mode=mode,
                mutation=mutation,
                forward_and_discard=forward_and_discard,
                marker_edit=marker_edit,
            )
            self._next_id += 1
            self._rules[rule.id] = rule
            self._events.append(
                "rule-changed", {"rule_id": rule.id, "action": "created", "mode": mode.value}
            )
            return replace(rule)

    def get(self, rule_id: int) -> Rule | None:
        with self._lock:
            rule = self._rules.get(rule_id)
            return replace(rule) if rule else None

    def list(self) -> list[Rule]:
        with self._lock:
            return [replace(r) for r in sorted(self._rules.values(), key=lambda r: r.id)]

    def delete(self, rule_id: int) -> bool:
        with self._lock:
            if rule_id not in self._rules:
                return False
            del self._rules[rule_id]
            self._events.append("rule-changed", {"rule_id": rule_id, "action": "deleted"})
            return True

    def update(self, rule_id: int, **changes) -> Rule:
        """Apply field changes atomically; raises KeyError for unknown rules
        and ValueError for transitions that make no sense."""
        allowed = {"matcher", "mode", "mutation", "forward_and_discard", "marker_edit"}
        bad = set(changes) - allowed
        if bad:
            raise ValueError(f"cannot update fields {sorted(bad)}")
        with self._lock:
            rule = self._rules.get(rule_id)
            if rule is None:
                raise KeyError(rule_id)
            mode = changes.get("mode", rule.mode)
            mutation = changes.get("mutation", rule.mutation)
            if mode is RuleMode.REWRITE:
                if rule.baseline is None:
                    raise ValueError("rewrite mode requires a captured baseline")
                if mutation is None:
                    raise ValueError("rewrite mode requires a mutation")
            for key, value in changes.items():
                setattr(rule, key, value)
            self._events.append(
                "rule-changed",
                {"rule_id": rule_id, "action": "updated", "mode": rule.mode.value},
            )
            return replace(rule)

    def arm_capture(self, rule_id: int) -> Rule:
        with self._lock:
            rule = self._rules.get(rule_id)
            if rule is None:
                raise KeyError(rule_id)
            rule.mode = RuleMode.CAPTURE_NEXT
            self._events.append(
                "rule-changed",
                {"rule_id": rule_id, "action": "updated", "mode": rule.mode.value},
            )
            return replace(rule)

    def complete_capture(self, rule_id: int, baseline: Baseline) -> bool:
        """Store a baseline iff the rule is still armed; one winner per arm."""
        with self._lock:
            rule = self._rules.get(rule_id)
            if rule is None or rule.mode is not RuleMode.CAPTURE_NEXT:
                return False
            rule.baseline = baseline
            rule.mode = RuleMode.PASS_THROUGH
            self._events.append(
                "baseline-captured",
                {"rule_id": rule_id, "exchange_id": baseline.exchange_id},
            )
            return True

    def match(self, method: str, path: str, query: str) -> Rule | None:
        """Most specific matching rule; ties go to the oldest rule."""
        with self._lock:
            candidates = [
                r for r in self._rules.values() if r.matcher.matches(method, path, query)
            ]
            if not candidates:
                return None
            best = min(candidates, key=lambda r: (-r.matcher.specificity(), r.id))
            return replace(best)


# ---------------------------------------------------------------------------
# The server
# ---------------------------------------------------------------------------

class _ProxyHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    store: SessionStore
    rules: RuleSet
    events: EventLog
    upstream_timeout: float


class ProxyServer:
    """Lifecycle wrapper: binds, serves on a background thread, stops cleanly."""

    def __init__(
        self,
        store: SessionStore,
        rules: RuleSet,
        events: EventLog,
        host: str = "127.0.0.1",
        port: int = 0,
        upstream_timeout: float = DEFAULT_UPSTREAM_TIMEOUT,
    ):
        self._httpd = _ProxyHTTPServer((host, port), _ProxyHandler)
        self._httpd.store = store
        self._httpd.rules = rules
        self._httpd.events = events
        self._httpd.upstream_timeout = upstream_timeout
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._httpd.server_address[:2]
        return str(host), int(port)

    def start(self) -> "ProxyServer":
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True
        )
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    def __enter__(self) -> "ProxyServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


class _ProxyHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    # headers and body go out as separate writes; without TCP_NODELAY the
    # second one can sit behind a delayed ACK for tens of milliseconds
    disable_nagle_algorithm = True
    server: _ProxyHTTPServer

    def log_message(self, format: str, *args) -> None:
        pass  # the event log is the record, not stderr

    # every ordinary method funnels into one flow
    def _method(self) -> None:
        try:
            self._handle()
        except (BrokenPipeError, ConnectionResetError):
            self.close_connection = True

    do_GET = do_POST = do_PUT = do_DELETE = do_PATCH = do_HEAD = do_OPTIONS = _method

    # -- request side --------------------------------------------------------

    def _resolve_upstream(self) -> tuple[tuple[str, int], str]:
        if self.path.startswith("http://"):
            parts = urlsplit(self.path)
            if not parts.hostname:
                raise ValueError("absolute URI lacks a host")
            target = parts.path or "/"
            if parts.query:
                target += "?" + parts.query
            return (parts.hostname, parts.port or 80), target
        if self.path.startswith("https://"):
            raise ValueError("https cannot be intercepted; use CONNECT")
        host_header = self.headers.get("Host")
        if not host_header:
            raise ValueError("origin-form request requires a Host header")
        host, _, port_text = host_header.partition(":")
        try:
            port = int(port_text) if port_text else 80
        except ValueError:
            raise ValueError(f"bad Host header port: {host_header!r}") from None
        own_host, own_port = self.server.server_address[:2]
        if port == own_port and host in (own_host, "localhost", "127.0.0.1", "::1"):
            raise ValueError("request would loop back into the proxy")
        return (host, port), self.path

    def _read_request_body(self) -> bytes | None:
        if "chunked" in (self.headers.get("Transfer-Encoding") or "").lower():
            return None  # signals 411 below
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else b""

    # -- main flow ------------------------------------------------------------

    def _handle(self) -> None:
        try:
            upstream, target = self._resolve_upstream()
        except ValueError as exc:
            self._send_synthetic(400, {"error": "bad_request", "detail": str(exc)})
            return
        try:
            body = self._read_request_body()
        except ValueError:
            self._send_synthetic(400, {"error": "bad_content_length"})
            return
        if body is None:
            self._send_synthetic(411, {"error": "length_required"})
            return

        request_record = RequestRecord(
            method=self.command,
            target=target,
            headers=tuple(self.headers.items()),
            body=body,
        )
        path, _, query = target.partition("?")
        rule = self.server.rules.match(self.command, path, query)

        if (
            rule is not None
            and rule.mode is RuleMode.REWRITE
            and rule.baseline is not None
            and rule.mutation is not None
        ):
            self._serve_rewrite(rule, upstream, target, body, request_record)
            return

        fetched = self._fetch_upstream(upstream, target, body)
        if isinstance(fetched, Exception):
            self.server.events.append(
                "warning",
                {"message": f"upstream unreachable: {fetched}", "target": target},
            )
            self._send_synthetic(
                502,
                {"error": "upstream_unreachable", "detail": str(fetched)},
                request_record=request_record,
            )
            return
        status, reason, raw_headers, resp_body = fetched
        headers = strip_hop_by_hop(raw_headers)

        serve_headers, serve_body, origin = headers, resp_body, Origin.UPSTREAM
        rule_id = rule.id if rule else None
        if rule is not None and rule.marker_edit is not None:
            marked = self._marked_variant(rule, headers, resp_body)
            if marked is not None:
                serve_headers, serve_body = marked
                origin = Origin.MUTATED_LOCAL

        exchange, final_headers, final_body = self._record_exchange(
            status, reason, serve_headers, serve_body, origin, rule_id, request_record
        )
        # the capture must land before the client can react to the response
        if rule is not None and rule.mode is RuleMode.CAPTURE_NEXT:
            baseline = _build_baseline(status, reason, headers, resp_body, exchange.id)
            self.server.rules.complete_capture(rule.id, baseline)
        self._write_response(status, reason, final_headers, final_body)

    def _serve_rewrite(
        self,
        rule: Rule,
        upstream: tuple[str, int],
        target: str,
        body: bytes,
        request_record: RequestRecord,
    ) -> None:
        if rule.forward_and_discard:
            self._fetch_upstream(upstream, target, body)  # keep upstream state warm
        baseline = rule.baseline
        assert baseline is not None and rule.mutation is not None
        try:
            outcome = apply_mutation(
                baseline.body, baseline.format, rule.mutation, baseline.status
            )
            headers = _merge_headers(list(baseline.headers), outcome.headers_delta)
            status, serve_body = outcome.status, outcome.body
        except (MutationFailed, MalformedDocument) as exc:
            self.server.events.append(
                "mutation-failed",
                {"rule_id": rule.id, "message": f"mutation failed, serving baseline: {exc}"},
            )
            headers = list(baseline.headers)
            status, serve_body = baseline.status, baseline.body
        self._record_and_write(
            status,
            baseline.reason,
            headers,
            serve_body,
            Origin.MUTATED_LOCAL,
            rule.id,
            request_record,
        )

    def _marked_variant(
        self, rule: Rule, headers: list[tuple[str, str]], resp_body: bytes
    ) -> tuple[list[tuple[str, str]], bytes] | None:
        assert rule.marker_edit is not None
        decoded = decode_body(resp_body, get_header(headers, "Content-Encoding"))
        if decoded is None:
            self._warn_marker(rule, "response encoding cannot be decoded")
            return None
        fmt = detect_format(decoded, get_header(headers, "Content-Type"))
        if fmt is DocumentFormat.OPAQUE:
            self._warn_marker(rule, "response body is not JSON or XML")
            return None
        try:
            tree = parse(decoded, fmt)
            marked = serialize(
                apply_marker(tree, parse_path(rule.marker_edit.path), rule.marker_edit.sentinel)
            )
        except (MutationFailed, MalformedDocument, ValueError) as exc:
            self._warn_marker(rule, str(exc))
            return None
        out = [(n, v) for n, v in headers if n.lower() != "content-encoding"]
        return out, marked

    def _warn_marker(self, rule: Rule, message: str) -> None:
        self.server.events.append(
            "warning", {"rule_id": rule.id, "message": f"marker edit skipped: {message}"}
        )

    # -- upstream --------------------------------------------------------------

    def _fetch_upstream(
        self, upstream: tuple[str, int], target: str, body: bytes
    ) -> tuple[int, str, list[tuple[str, str]], bytes] | Exception:
        host, port = upstream
        headers: dict[str, str] = {}
        for name, value in strip_hop_by_hop(list(self.headers.items())):
            if name.lower() == "content-length":
                continue
            headers[name] = value
        headers.setdefault("Host", host if port == 80 else f"{host}:{port}")
        conn = http.client.HTTPConnection(host, port, timeout=self.server.upstream_timeout)
        try:
            conn.request(self.command, target, body=body or None, headers=headers)
            response = conn.getresponse()
            data = response.read()
            return response.status, response.reason, response.getheaders(), data
        except OSError as exc:
            return exc
        finally:
            conn.close()

    # -- response side ------------------------------------------------------------

    def _record_exchange(
        self,
        status: int,
        reason: str,
        headers: list[tuple[str, str]],
        body: bytes,
        origin: Origin,
        rule_id: int | None,
        request_record: RequestRecord,
    ) -> tuple:
        bodyless = status < 200 or status in (204, 304) or self.command == "HEAD"
        final_headers = [
            (n, v)
            for n, v in headers
            if n.lower() not in ("content-length", "transfer-encoding")
        ]
        if self.command == "HEAD":
            # there is no body to measure; relay the advertised length
            advertised = get_header(headers, "Content-Length")
            if advertised is not None:
                final_headers.append(("Content-Length", advertised))
        elif not bodyless:
            final_headers.append(("Content-Length", str(len(body))))
        exchange = self.server.store.add_exchange(
            request_record,
            ResponseRecord(
                status=status,
                reason=reason,
                headers=tuple(final_headers),
                body=b"" if bodyless else body,
            ),
            origin,
            rule_id,
        )
        self.server.events.append(
            "flow-recorded",
            {
                "exchange_id": exchange.id,
                "rule_id": rule_id,
                "origin": origin.value,
                "method": request_record.method,
                "target": request_record.target,
                "status": status,
            },
        )
        return exchange, final_headers, b"" if bodyless else body

    def _write_response(
        self, status: int, reason: str, final_headers: list[tuple[str, str]], body: bytes
    ) -> None:
        self.send_response_only(status, reason)
        for name, value in final_headers:
            self.send_header(name, value)
        self.end_headers()
        if body:
            self.wfile.write(body)

    def _record_and_write(
        self,
        status: int,
        reason: str,
        headers: list[tuple[str, str]],
        body: bytes,
        origin: Origin,
        rule_id: int | None,
        request_record: RequestRecord,
    ):
        exchange, final_headers, final_body = self._record_exchange(
            status, reason, headers, body, origin, rule_id, request_record
        )
        self._write_response(status, reason, final_headers, final_body)
        return exchange

    def _send_synthetic(
        self, status: int, payload: dict, request_record: RequestRecord | None = None
    ) -> None:
        body = json.dumps(payload).encode("utf-8")
        headers = [("Content-Type", "application/json")]
        if request_record is not None:
            self._record_and_write(
                status, "", headers, body, Origin.MUTATED_LOCAL, None, request_record
            )
            return
        self.send_response_only(status)
        for name, value in headers:
            self.send_header(name, value)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    # -- CONNECT tunneling -----------------------------------------------------------

    def do_CONNECT(self) -> None:
        host, _, port_text = self.path.partition(":")
        try:
            port = int(port_text) if port_text else 443
            remote = socket.create_connection((host, port), timeout=self.server.upstream_timeout)
        except (OSError, ValueError) as exc:
            self._send_synthetic(502, {"error": "tunnel_failed", "detail": str(exc)})
            self.close_connection = True
            return
        self.send_response_only(200, "Connection Established")
        self.end_headers()
        self.server.store.add_exchange(
            RequestRecord(method="CONNECT", target=self.path, headers=tuple(self.headers.items())),
            ResponseRecord(status=200, reason="Connection Established"),
            Origin.UPSTREAM,
        )
        self.server.events.append("tunnel-opened", {"target": self.path})
        remote.settimeout(None)
        self.connection.settimeout(None)
        pump_back = threading.Thread(
            target=_pump, args=(remote, self.connection), daemon=True
        )
        pump_back.start()
        _pump(self.connection, remote)
        pump_back.join(timeout=1.0)
        try:
            remote.close()
        except OSError:
            pass
        self.close_connection = True


def _pump(src: socket.socket, dst: socket.socket) -> None:
    try:
        while True:
            data = src.recv(65536)
            if not data:
                break
            dst.sendall(data)
    except OSError:
        pass
    finally:
        try:
            dst.shutdown(socket.SHUT_WR)
        except OSError:
            pass


def _merge_headers(
    headers: list[tuple[str, str]], delta: dict[str, str]
) -> list[tuple[str, str]]:
    out = list(headers)
    for name, value in delta.items():
        lowered = name.lower()
        replaced = False
        for i, (n, _) in enumerate(out):
            if n.lower() == lowered:
                out[i] = (n, value)
                replaced = True
                break
        if not replaced:
            out.append((name, value))
    return out


def _build_baseline(
    status: int,
    reason: str,
    headers: list[tuple[str, str]],
    body: bytes,
    exchange_id: int,
) -> Baseline:
    decoded = decode_body(body, get_header(headers, "Content-Encoding"))
    if decoded is None:
        kept = [(n, v) for n, v in headers if n.lower() != "content-length"]
        return Baseline(
            status, reason, tuple(kept), body, DocumentFormat.OPAQUE, exchange_id
        )
    kept = [
        (n, v)
        for n, v in headers
        if n.lower() not in ("content-length", "content-encoding")
    ]
    fmt = detect_format(decoded, get_header(headers, "Content-Type"))
    return Baseline(status, reason, tuple(kept), decoded, fmt, exchange_id)
