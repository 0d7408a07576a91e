"""Deterministic upstream server used by proxy and end-to-end tests.

Routes are plain data: path -> (status, headers, body). The stub writes
exactly the headers it is given plus a trailing Content-Length, and adds
no Server/Date headers, so byte-level comparisons through the proxy stay
stable.
"""

from __future__ import annotations

import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

Route = tuple[int, list[tuple[str, str]], bytes]


class _StubHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True
    server: "_StubServer"

    def log_message(self, format: str, *args) -> None:
        pass

    def _serve(self) -> None:
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        with self.server.lock:
            self.server.requests.append(
                (self.command, self.path, list(self.headers.items()), body)
            )
            route = self.server.routes.get(self.path)
        if route is None:
            payload = b'{"error":"no such route"}'
            self.send_response_only(404)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)
            return
        status, headers, payload = route
        if callable(payload):
            payload = payload(body)
        self.send_response_only(status)
        for name, value in headers:
            self.send_header(name, value)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(payload)

    do_GET = do_POST = do_PUT = do_DELETE = do_PATCH = do_HEAD = _serve


class _StubServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    routes: dict
    requests: list
    lock: threading.Lock


class StubUpstream:
    """Start with `with StubUpstream({...}) as stub:`; read stub.port."""

    def __init__(self, routes: dict[str, Route] | None = None):
        self._httpd = _StubServer(("127.0.0.1", 0), _StubHandler)
        self._httpd.routes = dict(routes or {})
        self._httpd.requests = []
        self._httpd.lock = threading.Lock()
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def requests(self) -> list:
        with self._httpd.lock:
            return list(self._httpd.requests)

    def set_route(self, path: str, status: int, headers: list[tuple[str, str]], body) -> None:
        with self._httpd.lock:
            self._httpd.routes[path] = (status, headers, body)

    def start(self) -> "StubUpstream":
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

    def __enter__(self) -> "StubUpstream":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
