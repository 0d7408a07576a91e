"""Recorded testing sessions: exchanges, observations, and the event log.

A session is an append-only sequence of records. On disk it is line-delimited
JSON: one header line carrying the format version, then one line per record
in insertion order. Bodies are base64 so the file stays valid UTF-8 no matter
what the wire carried.
"""

from __future__ import annotations

import base64
import enum
import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .mutation import MutationSpec, spec_from_dict, spec_to_dict

FORMAT_VERSION = 1


class SessionFormatError(ValueError):
    """A session file or record dict does not follow the record syntax."""


class Origin(str, enum.Enum):
    UPSTREAM = "upstream"
    MUTATED_LOCAL = "mutated_local"


class Behavior(str, enum.Enum):
    """How the client visibly reacted to a served response."""

    NORMAL_LOAD = "normal_load"
    FORCE_CLOSE = "force_close"
    ERROR_MESSAGE = "error_message"
    SILENT_FAILURE = "silent_failure"
    INDEFINITE_LOADING = "indefinite_loading"
    GRACEFUL_TIMEOUT = "graceful_timeout"


# most severe first; aggregation keeps the worst behavior per cell
SEVERITY_ORDER: tuple[Behavior, ...] = (
    Behavior.FORCE_CLOSE,
    Behavior.INDEFINITE_LOADING,
    Behavior.SILENT_FAILURE,
    Behavior.ERROR_MESSAGE,
    Behavior.GRACEFUL_TIMEOUT,
    Behavior.NORMAL_LOAD,
)


def severity(behavior: Behavior) -> int:
    """Lower is worse; NORMAL_LOAD is the least severe."""
    return SEVERITY_ORDER.index(behavior)


@dataclass(frozen=True)
class RequestRecord:
    method: str
    target: str  # origin-form: path plus optional query
    headers: tuple[tuple[str, str], ...] = ()
    body: bytes = b""


@dataclass(frozen=True)
class ResponseRecord:
    status: int
    reason: str = ""
    headers: tuple[tuple[str, str], ...] = ()
    body: bytes = b""

    def header(self, name: str) -> str | None:
        lowered = name.lower()
        for n, v in self.headers:
            if n.lower() == lowered:
                return v
        return None


@dataclass(frozen=True)
class CapturedExchange:
    id: int
    wall_time: float
    monotonic_time: float
    request: RequestRecord
    response: ResponseRecord
    origin: Origin
    rule_id: int | None = None


@dataclass(frozen=True)
class AutoSignals:
    """Machine-derived hints recorded alongside a human behavior call."""

    retry_count: int = 0
    seconds_to_next_request: float | None = None
    client_aborted: bool = False


@dataclass(frozen=True)
class ObservationRecord:
    exchange_id: int
    behavior: Behavior
    mutation: MutationSpec | None = None
    note: str = ""
    auto_signals: AutoSignals | None = None


# ---------------------------------------------------------------------------
# Record codec
# ---------------------------------------------------------------------------

def _headers_to_json(headers: tuple[tuple[str, str], ...]) -> list[list[str]]:
    return [[n, v] for n, v in headers]


def _headers_from_json(raw: object, context: str) -> tuple[tuple[str, str], ...]:
    if not isinstance(raw, list) or not all(
        isinstance(h, list) and len(h) == 2 and all(isinstance(x, str) for x in h)
        for h in raw
    ):
        raise SessionFormatError(f"{context}: headers must be [name, value] pairs")
    return tuple((n, v) for n, v in raw)


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(raw: object, context: str) -> bytes:
    if not isinstance(raw, str):
        raise SessionFormatError(f"{context}: body must be a base64 string")
    try:
        return base64.b64decode(raw, validate=True)
    except Exception:
        raise SessionFormatError(f"{context}: invalid base64 body") from None


def exchange_to_dict(exchange: CapturedExchange) -> dict:
    return {
        "record": "exchange",
        "id": exchange.id,
        "wall_time": exchange.wall_time,
        "monotonic_time": exchange.monotonic_time,
        "origin": exchange.origin.value,
        "rule_id": exchange.rule_id,
        "request": {
            "method": exchange.request.method,
            "target": exchange.request.target,
            "headers": _headers_to_json(exchange.request.headers),
            "body": _b64(exchange.request.body),
        },
        "response": {
            "status": exchange.response.status,
            "reason": exchange.response.reason,
            "headers": _headers_to_json(exchange.response.headers),
            "body": _b64(exchange.response.body),
        },
    }


def exchange_from_dict(data: dict) -> CapturedExchange:
    try:
        req = data["request"]
        res = data["response"]
        origin = Origin(data["origin"])
        rule_id = data["rule_id"]
        if rule_id is not None and not isinstance(rule_id, int):
            raise SessionFormatError("exchange: rule_id must be an integer or null")
        return CapturedExchange(
            id=int(data["id"]),
            wall_time=float(data["wall_time"]),
            monotonic_time=float(data["monotonic_time"]),
            origin=origin,
            rule_id=rule_id,
            request=RequestRecord(
                method=str(req["method"]),
                target=str(req["target"]),
                headers=_headers_from_json(req["headers"], "request"),
                body=_unb64(req["body"], "request"),
            ),
            response=ResponseRecord(
                status=int(res["status"]),
                reason=str(res.get("reason", "")),
                headers=_headers_from_json(res["headers"], "response"),
                body=_unb64(res["body"], "response"),
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SessionFormatError):
            raise
        raise SessionFormatError(f"bad exchange record: {exc}") from None


def observation_to_dict(obs: ObservationRecord) -> dict:
    out: dict = {
        "record": "observation",
        "exchange_id": obs.exchange_id,
        "behavior": obs.behavior.value,
        "mutation": spec_to_dict(obs.mutation) if obs.mutation else None,
        "note": obs.note,
    }
    if obs.auto_signals is not None:
        out["auto_signals"] = {
            "retry_count": obs.auto_signals.retry_count,
            "seconds_to_next_request": obs.auto_signals.seconds_to_next_request,
            "client_aborted": obs.auto_signals.client_aborted,
        }
    return out


def observation_from_dict(data: dict) -> ObservationRecord:
    try:
        behavior = Behavior(data["behavior"])
        raw_mutation = data.get("mutation")
        signals = None
        if "auto_signals" in data and data["auto_signals"] is not None:
            raw = data["auto_signals"]
            seconds = raw.get("seconds_to_next_request")
            signals = AutoSignals(
                retry_count=int(raw.get("retry_count", 0)),
                seconds_to_next_request=None if seconds is None else float(seconds),
                client_aborted=bool(raw.get("client_aborted", False)),
            )
        return ObservationRecord(
            exchange_id=int(data["exchange_id"]),
            behavior=behavior,
            mutation=spec_from_dict(raw_mutation) if raw_mutation else None,
            note=str(data.get("note", "")),
            auto_signals=signals,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SessionFormatError):
            raise
        raise SessionFormatError(f"bad observation record: {exc}") from None


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------

class SessionStore:
    """Thread-safe, append-only session of exchanges and observations.

    With a stream_path the store also appends each record to disk as it is
    added, so a crashed run leaves a readable file behind.
    """

    def __init__(self, stream_path: str | Path | None = None):
        self._lock = threading.RLock()
        self._exchanges: list[CapturedExchange] = []
        self._by_id: dict[int, CapturedExchange] = {}
        self._observations: list[ObservationRecord] = []
        self._next_id = 1
        self._stream = None
        if stream_path is not None:
            path = Path(stream_path)
            fresh = not path.exists() or path.stat().st_size == 0
            self._stream = path.open("a", encoding="utf-8")
            if fresh:
                self._stream.write(json.dumps(_header()) + "\n")
                self._stream.flush()

    # -- recording ---------------------------------------------------------

    def add_exchange(
        self,
        request: RequestRecord,
        response: ResponseRecord,
        origin: Origin,
        rule_id: int | None = None,
    ) -> CapturedExchange:
        with self._lock:
            exchange = CapturedExchange(
                id=self._next_id,
                wall_time=time.time(),
                monotonic_time=time.monotonic(),
                request=request,
                response=response,
                origin=origin,
                rule_id=rule_id,
            )
            self._next_id += 1
            self._exchanges.append(exchange)
            self._by_id[exchange.id] = exchange
            self._write_line(exchange_to_dict(exchange))
            return exchange

    def add_observation(self, obs: ObservationRecord) -> ObservationRecord:
        with self._lock:
            if obs.exchange_id not in self._by_id:
                raise KeyError(obs.exchange_id)
            self._observations.append(obs)
            self._write_line(observation_to_dict(obs))
            return obs

    def _restore_exchange(self, exchange: CapturedExchange) -> None:
        with self._lock:
            if exchange.id in self._by_id:
                raise SessionFormatError(f"duplicate exchange id {exchange.id}")
            self._exchanges.append(exchange)
            self._by_id[exchange.id] = exchange
            self._next_id = max(self._next_id, exchange.id + 1)

    def _write_line(self, record: dict) -> None:
        if self._stream is not None:
            self._stream.write(json.dumps(record, ensure_ascii=False) + "\n")
            self._stream.flush()

    # -- reading -----------------------------------------------------------

    @property
    def exchanges(self) -> list[CapturedExchange]:
        with self._lock:
            return list(self._exchanges)

    @property
    def observations(self) -> list[ObservationRecord]:
        with self._lock:
            return list(self._observations)

    def get_exchange(self, exchange_id: int) -> CapturedExchange | None:
        with self._lock:
            return self._by_id.get(exchange_id)

    def observations_for(self, exchange_id: int) -> list[ObservationRecord]:
        with self._lock:
            return [o for o in self._observations if o.exchange_id == exchange_id]

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        with self._lock, Path(path).open("w", encoding="utf-8") as fh:
            fh.write(json.dumps(_header()) + "\n")
            for exchange in self._exchanges:
                fh.write(json.dumps(exchange_to_dict(exchange), ensure_ascii=False) + "\n")
            for obs in self._observations:
                fh.write(json.dumps(observation_to_dict(obs), ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SessionStore":
        store = cls()
        first = True
        with Path(path).open("r", encoding="utf-8") as fh:
            for line_number, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SessionFormatError(f"line {line_number}: {exc.msg}") from None
                if not isinstance(record, dict) or "record" not in record:
                    raise SessionFormatError(f"line {line_number}: not a record object")
                if first:
                    if record["record"] != "header":
                        raise SessionFormatError("first line must be the header record")
                    if record.get("format_version") != FORMAT_VERSION:
                        raise SessionFormatError(
                            f"unsupported format version {record.get('format_version')!r}"
                        )
                    first = False
                    continue
                kind = record["record"]
                if kind == "exchange":
                    store._restore_exchange(exchange_from_dict(record))
                elif kind == "observation":
                    obs = observation_from_dict(record)
                    store._observations.append(obs)
                elif kind == "header":
                    raise SessionFormatError(f"line {line_number}: duplicate header")
                else:
                    raise SessionFormatError(f"line {line_number}: unknown record {kind!r}")
        if first:
            raise SessionFormatError("empty session file")
        return store

    def close(self) -> None:
        with self._lock:
            if self._stream is not None:
                self._stream.close()
                self._stream = None


def _header() -> dict:
    return {"record": "header", "format_version": FORMAT_VERSION}


# ---------------------------------------------------------------------------
# Event log
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Event:
    id: int
    kind: str
    wall_time: float
    data: dict

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind, "time": self.wall_time, "data": self.data}


class EventLog:
    """In-memory event feed with strictly increasing ids and replay."""

    def __init__(self, capacity: int = 10_000):
        self._lock = threading.Condition()
        self._events: list[Event] = []
        self._next_id = 1
        self._capacity = capacity

    def append(self, kind: str, data: dict | None = None) -> Event:
        with self._lock:
            event = Event(self._next_id, kind, time.time(), data or {})
            self._next_id += 1
            self._events.append(event)
            if len(self._events) > self._capacity:
                del self._events[: len(self._events) - self._capacity]
            self._lock.notify_all()
            return event

    def since(self, last_id: int = 0) -> list[Event]:
        with self._lock:
            return [e for e in self._events if e.id > last_id]

    def wait_for(self, last_id: int, timeout: float) -> list[Event]:
        """Events after last_id, blocking up to timeout if none yet."""
        deadline = time.monotonic() + timeout
        with self._lock:
            while True:
                pending = [e for e in self._events if e.id > last_id]
                if pending:
                    return pending
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return []
                self._lock.wait(remaining)
