"""A scripted HTTP client standing in for a mobile app.

The client repeatedly fetches one endpoint through the proxy, works out
which mutation (if any) each response suffered, and reacts the way its
fragility matrix says an app of that temperament would. Because the
reactions are scripted, an end-to-end run has a known ground truth to
compare observations against.

The detector is deliberately independent of the mutation operators: it
compares each response against the bundled fixture document using only the
standard json module, so agreement between the two sides means something.
"""

from __future__ import annotations

import argparse
import enum
import http.client
import json
import sys
import threading
import time
from dataclasses import dataclass
from typing import Callable, Mapping
from urllib.parse import urlsplit

from .mutation import KIND_ORDER, MutationKind
from .session import Behavior


class ProxyUnreachable(ConnectionError):
    """The proxy itself could not be reached (distinct from upstream trouble)."""


class Reaction(str, enum.Enum):
    PARSE_STRICTLY_AND_CRASH = "parse_strictly_and_crash"
    SHOW_ERROR = "show_error"
    IGNORE_SILENTLY = "ignore_silently"
    HANG_FOREVER = "hang_forever"
    RETRY_THEN_TIMEOUT = "retry_then_timeout"


# what an observer watching the scripted client would write down
REACTION_BEHAVIOR: dict[Reaction, Behavior] = {
    Reaction.PARSE_STRICTLY_AND_CRASH: Behavior.FORCE_CLOSE,
    Reaction.SHOW_ERROR: Behavior.ERROR_MESSAGE,
    Reaction.IGNORE_SILENTLY: Behavior.SILENT_FAILURE,
    Reaction.HANG_FOREVER: Behavior.INDEFINITE_LOADING,
    Reaction.RETRY_THEN_TIMEOUT: Behavior.GRACEFUL_TIMEOUT,
}

NORMAL_REACTION = "normal_load"


@dataclass(frozen=True)
class FragilityMatrix:
    """Scripted reaction for each mutation kind, exactly one per kind."""

    reactions: tuple[tuple[MutationKind, Reaction], ...]

    def __post_init__(self) -> None:
        kinds = [kind for kind, _ in self.reactions]
        if sorted(kinds, key=KIND_ORDER.index) != list(KIND_ORDER) or len(kinds) != len(
            KIND_ORDER
        ):
            raise ValueError("matrix must map every mutation kind exactly once")

    def reaction_for(self, kind: MutationKind) -> Reaction:
        for k, reaction in self.reactions:
            if k is kind:
                return reaction
        raise KeyError(kind)

    def expected_behavior(self, kind: MutationKind) -> Behavior:
        return REACTION_BEHAVIOR[self.reaction_for(kind)]

    def to_dict(self) -> dict[str, str]:
        return {kind.value: reaction.value for kind, reaction in self.reactions}

    @classmethod
    def from_mapping(
        cls, mapping: Mapping[MutationKind | str, Reaction | str]
    ) -> "FragilityMatrix":
        pairs = []
        for kind, reaction in mapping.items():
            try:
                pairs.append((MutationKind(kind), Reaction(reaction)))
            except ValueError as exc:
                raise ValueError(f"bad matrix entry {kind!r}: {reaction!r}") from None
        pairs.sort(key=lambda p: KIND_ORDER.index(p[0]))
        return cls(tuple(pairs))


# ---------------------------------------------------------------------------
# The bundled fixture and its derived expectations
# ---------------------------------------------------------------------------

FIXTURE_BODY: bytes = (
    b'{"city": "Utrecht", '
    b'"station": {"id": 7, "active": true, "calibration": null}, '
    b'"readings": [{"hour": 1, "temp_c": 11.5}, {"hour": 2, "temp_c": 12.25}], '
    b'"tags": ["wind", "rain"], '
    b'"revision": "42"}'
)
FIXTURE_CONTENT_TYPE = "application/json"

_EXPECTED_DOC = json.loads(FIXTURE_BODY)


def _kind_of(value: object) -> str:
    # bool first: Python bools are ints
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, dict):
        return "object"
    if isinstance(value, list):
        return "array"
    if isinstance(value, str):
        return "string"
    if isinstance(value, (int, float)):
        return "number"
    return "null"


def _expected_fields(value: object, prefix: str = "") -> list[str]:
    fields = []
    if isinstance(value, dict):
        for key, child in value.items():
            path = f"{prefix}/{key}"
            fields.append(path)
            fields.extend(_expected_fields(child, path))
    elif isinstance(value, list):
        for i, child in enumerate(value):
            fields.extend(_expected_fields(child, f"{prefix}/{i}"))
    return fields


EXPECTED_FIELDS: tuple[str, ...] = tuple(_expected_fields(_EXPECTED_DOC))

_VALUE_DRIFT = "value_drift"


def _diff(expected: object, actual: object, flags: set[object]) -> None:
    if _kind_of(expected) != _kind_of(actual):
        flags.add(MutationKind.TYPE_CHANGE)
        return
    kind = _kind_of(expected)
    if kind == "object":
        assert isinstance(expected, dict) and isinstance(actual, dict)
        for key, value in expected.items():
            if key in actual:
                _diff(value, actual[key], flags)
            else:
                flags.add(MutationKind.FIELD_REMOVAL)
        for key in actual:
            if key not in expected:
                flags.add(MutationKind.FIELD_ADDITION)
    elif kind == "array":
        assert isinstance(expected, list) and isinstance(actual, list)
        if len(actual) > len(expected):
            flags.add(MutationKind.FIELD_ADDITION)
        elif len(actual) < len(expected):
            flags.add(MutationKind.FIELD_REMOVAL)
        for e, a in zip(expected, actual):
            _diff(e, a, flags)
    elif expected != actual:
        flags.add(_VALUE_DRIFT)


def detect_mutation(body: bytes, expected_body: bytes | None = None) -> MutationKind | None:
    """Name the mutation a response suffered, or None for an intact one.

    Checks, in order: byte equality, emptiness, a strict parse, the
    expected-field checklist with type comparison. A body whose parsed
    document matches the expectation while its bytes do not was reshaped,
    not resized. Leaf values drifting inside an intact shape is what live
    APIs do all day, so that alone names nothing.
    """
    if expected_body is None:
        expected_body = FIXTURE_BODY
    if body == expected_body:
        return None
    if len(body) == 0:
        return MutationKind.EMPTY_RESPONSE
    try:
        actual = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        return MutationKind.MALFORMED_RESPONSE

    flags: set[object] = set()
    _diff(json.loads(expected_body), actual, flags)
    for kind in (
        MutationKind.TYPE_CHANGE,
        MutationKind.FIELD_REMOVAL,
        MutationKind.FIELD_ADDITION,
    ):
        if kind in flags:
            return kind
    if not flags:
        return MutationKind.FORMAT_DISRUPTION
    return None


def _first_scalar_echo(actual: object) -> str:
    if isinstance(actual, dict):
        for key, value in actual.items():
            if not isinstance(value, (dict, list)):
                return f"{key}={value}"
    return ""


# ---------------------------------------------------------------------------
# Reaction log
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReactionRecord:
    tick: float
    cycle: int
    detected_mutation: str
    reaction: str
    echo: str = ""

    def to_dict(self) -> dict:
        out = {
            "tick": self.tick,
            "cycle": self.cycle,
            "detected_mutation": self.detected_mutation,
            "reaction": self.reaction,
        }
        if self.echo:
            out["echo"] = self.echo
        return out


def record_from_json(line: str) -> ReactionRecord:
    data = json.loads(line)
    return ReactionRecord(
        tick=float(data["tick"]),
        cycle=int(data["cycle"]),
        detected_mutation=str(data["detected_mutation"]),
        reaction=str(data["reaction"]),
        echo=str(data.get("echo", "")),
    )


# ---------------------------------------------------------------------------
# The request loop
# ---------------------------------------------------------------------------

def _fetch(
    proxy_address: tuple[str, int], target_url: str, timeout: float
) -> tuple[bytes, http.client.HTTPConnection]:
    host, port = proxy_address
    conn = http.client.HTTPConnection(host, port, timeout=timeout)
    try:
        conn.connect()
    except OSError as exc:
        raise ProxyUnreachable(f"proxy at {host}:{port} not reachable: {exc}") from None
    try:
        # absolute-URI request line; Host names the upstream, not the proxy
        conn.request("GET", target_url, headers={"Host": urlsplit(target_url).netloc})
        response = conn.getresponse()
        body = response.read()
    except OSError as exc:
        conn.close()
        raise ProxyUnreachable(f"proxy dropped the connection: {exc}") from None
    return body, conn


def run_client(
    target_url: str,
    action_count: int,
    matrix: FragilityMatrix,
    proxy_address: tuple[str, int],
    *,
    expected_body: bytes | None = None,
    period: float = 0.0,
    retry_count: int = 2,
    retry_delay: float = 0.05,
    hang_limit_seconds: float | None = None,
    request_timeout: float = 10.0,
    sink: Callable[[ReactionRecord], None] | None = None,
) -> list[ReactionRecord]:
    """Perform `action_count` request cycles and react per the matrix.

    Each cycle emits exactly one log record. A scripted crash or hang ends
    the loop early: a crashed app is gone and a hung one never re-requests.
    The hang blocks forever by default; hang_limit_seconds is the hook for
    a harness-imposed kill timer, since bounding the hang is not the
    client's own job.
    """
    log: list[ReactionRecord] = []
    held_open: list[http.client.HTTPConnection] = []

    def emit(record: ReactionRecord) -> None:
        log.append(record)
        if sink is not None:
            sink(record)

    for cycle in range(1, action_count + 1):
        body, conn = _fetch(proxy_address, target_url, request_timeout)
        detected = detect_mutation(body, expected_body)

        if detected is None:
            echo = ""
            try:
                echo = _first_scalar_echo(json.loads(body.decode("utf-8")))
            except (UnicodeDecodeError, json.JSONDecodeError):
                pass
            conn.close()
            emit(ReactionRecord(time.time(), cycle, "none", NORMAL_REACTION, echo))
        else:
            reaction = matrix.reaction_for(detected)
            emit(ReactionRecord(time.time(), cycle, detected.value, reaction.value))
            if reaction is Reaction.PARSE_STRICTLY_AND_CRASH:
                conn.close()
                break
            if reaction is Reaction.HANG_FOREVER:
                held_open.append(conn)  # the connection stays open on purpose
                threading.Event().wait(hang_limit_seconds)
                break
            if reaction is Reaction.RETRY_THEN_TIMEOUT:
                conn.close()
                for _ in range(retry_count):
                    time.sleep(retry_delay)
                    retry_body, retry_conn = _fetch(
                        proxy_address, target_url, request_timeout
                    )
                    retry_conn.close()
                    if detect_mutation(retry_body, expected_body) is None:
                        break
            else:
                conn.close()

        if period and cycle < action_count:
            time.sleep(period)
    return log


def crashed(log: list[ReactionRecord]) -> bool:
    return any(r.reaction == Reaction.PARSE_STRICTLY_AND_CRASH.value for r in log)


# ---------------------------------------------------------------------------
# Command line entry
# ---------------------------------------------------------------------------

def _load_matrix(source: str) -> FragilityMatrix:
    if source.lstrip().startswith("{"):
        text = source
    else:
        with open(source, encoding="utf-8") as handle:
            text = handle.read()
    data = json.loads(text)
    if not isinstance(data, dict):
        raise ValueError("matrix must be a JSON object")
    return FragilityMatrix.from_mapping(data)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="apifray-simclient",
        description="scripted client with a configurable fragility matrix",
    )
    parser.add_argument("--proxy", required=True, help="proxy address as host:port")
    parser.add_argument("--target", required=True, help="URL to fetch each cycle")
    parser.add_argument("--actions", type=int, default=6, help="request cycles to perform")
    parser.add_argument(
        "--matrix", required=True, help="path to a matrix JSON file, or inline JSON"
    )
    parser.add_argument("--period", type=float, default=0.2)
    parser.add_argument("--retry-delay", type=float, default=0.05)
    parser.add_argument(
        "--hang-limit",
        type=float,
        default=None,
        help="optional bound on a scripted hang; unbounded when absent",
    )
    parser.add_argument("--timeout", type=float, default=10.0)
    args = parser.parse_args(argv)

    host, _, port = args.proxy.rpartition(":")
    try:
        proxy_address = (host, int(port))
        matrix = _load_matrix(args.matrix)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    def sink(record: ReactionRecord) -> None:
        print(json.dumps(record.to_dict()), flush=True)

    try:
        log = run_client(
            args.target,
            args.actions,
            matrix,
            proxy_address,
            period=args.period,
            retry_delay=args.retry_delay,
            hang_limit_seconds=args.hang_limit,
            request_timeout=args.timeout,
            sink=sink,
        )
    except ProxyUnreachable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 11 if crashed(log) else 0


if __name__ == "__main__":
    sys.exit(main())
