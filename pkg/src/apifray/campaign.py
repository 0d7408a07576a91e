"""Scripted mutation campaigns and the traffic-pattern detectors.

A campaign walks an endpoint through an ordered list of mutations: each step
arms the rewrite rule, waits for the client to trigger the action once, and
moves on when an observation lands (or the step window runs out). Alongside
the runner live the two read-only detectors: API versioning from URLs and
media types, and cache-behavior assessment from traffic shape plus
operator-entered probe results.

Behavior classification stays human: the network alone cannot tell a crash
from a silent failure, so auto-signals (retries, gaps) only corroborate what
the operator saw on screen.
"""

from __future__ import annotations

import enum
import json
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import urlsplit

from .mutation import (
    MutationFailed,
    MutationSpec,
    apply_mutation,
    spec_from_dict,
    spec_to_dict,
)
from .proxy import Matcher, Rule, RuleMode, RuleSet
from .session import (
    AutoSignals,
    Behavior,
    CapturedExchange,
    EventLog,
    ObservationRecord,
    Origin,
    SessionStore,
)

DEFAULT_OBSERVATION_WINDOW = 5.0
DEFAULT_CAPTURE_TIMEOUT = 30.0

# traffic shape thresholds for the paired-checksum heuristic
CHECKSUM_MAX_BODY_BYTES = 256
CHECKSUM_LEAD_SECONDS = 2.0


class CampaignError(Exception):
    """Base for campaign orchestration failures."""


class NoBaseline(CampaignError):
    """No captured baseline for the plan's matcher, and none arrived in time."""


class CampaignActive(CampaignError):
    """A plan is already running against this matcher."""


class InvalidCampaignPlan(CampaignError):
    """Plan file or dict does not follow the plan shape."""


class UnknownExchange(LookupError):
    """Observation refers to an exchange id the session does not contain."""


class NotMutated(CampaignError):
    """Observations attach only to locally mutated exchanges."""


class InsufficientEvidence(CampaignError):
    """Neither mutated traffic nor repeated actions to judge caching from."""


# ---------------------------------------------------------------------------
# Versioning detection
# ---------------------------------------------------------------------------

class VersioningScheme(str, enum.Enum):
    NONE_DETECTED = "none_detected"
    URL_PATH = "url_path"
    SEMANTIC_IN_URL = "semantic_in_url"
    MEDIA_TYPE_HEADER = "media_type_header"


@dataclass(frozen=True)
class VersioningInfo:
    scheme: VersioningScheme = VersioningScheme.NONE_DETECTED
    token: str = ""

    def __post_init__(self):
        if self.scheme is not VersioningScheme.NONE_DETECTED and not self.token:
            raise ValueError("a detected scheme requires a version token")
        if self.scheme is VersioningScheme.NONE_DETECTED and self.token:
            raise ValueError("no scheme, no token")

    def to_dict(self) -> dict:
        return {"scheme": self.scheme.value, "token": self.token}


_URL_VERSION = re.compile(r"v\d+")
_SEMANTIC_VERSION = re.compile(r"\d+\.\d+(\.\d+)?")
_VERSION_PARAMS = ("version", "v", "api-version")
_VENDORED_VERSION = re.compile(r"\.(v?\d+(?:\.\d+){0,2})(?=\+|$)")


def _version_from_media_type(value: str) -> str | None:
    parts = [p.strip() for p in value.split(";")]
    for param in parts[1:]:
        key, _, raw = param.partition("=")
        if key.strip().lower() in _VERSION_PARAMS:
            token = raw.strip().strip('"')
            if token:
                return token
    media = parts[0].lower()
    if "/vnd." in media:
        hit = _VENDORED_VERSION.search(media.partition("/")[2])
        if hit:
            return hit.group(1)
    return None


def detect_versioning(
    url: str,
    request_headers: tuple[tuple[str, str], ...] = (),
    response_headers: tuple[tuple[str, str], ...] = (),
) -> VersioningInfo:
    """Spot how an API carries its version, if at all.

    URL evidence outranks header evidence. Within the path, the first
    segment (left to right) that is either a `v<digits>` tag or a dotted
    numeric version decides the scheme. Header evidence means a version
    parameter or a vendored media type on Accept/Content-Type.
    """
    path = urlsplit(url).path
    for segment in path.split("/"):
        if _URL_VERSION.fullmatch(segment):
            return VersioningInfo(VersioningScheme.URL_PATH, segment)
        if _SEMANTIC_VERSION.fullmatch(segment):
            return VersioningInfo(VersioningScheme.SEMANTIC_IN_URL, segment)
    for headers in (request_headers, response_headers):
        for name, value in headers:
            if name.lower() in ("accept", "content-type", "accept-type"):
                token = _version_from_media_type(value)
                if token:
                    return VersioningInfo(VersioningScheme.MEDIA_TYPE_HEADER, token)
    return VersioningInfo()


# ---------------------------------------------------------------------------
# Caching assessment
# ---------------------------------------------------------------------------

class CachingVerdict(str, enum.Enum):
    NONE = "none"
    TIME_BASED = "time_based"
    HASH_BASED = "hash_based"
    SESSION_SCOPED = "session_scoped"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class CachingAssessment:
    verdict: CachingVerdict
    suspected: bool
    rationale: str

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "suspected": self.suspected,
            "rationale": self.rationale,
        }


def _split_target(exchange: CapturedExchange) -> tuple[str, str, str]:
    path, _, query = exchange.request.target.partition("?")
    return exchange.request.method, path, query


def _matching_exchanges(store: SessionStore, matcher: Matcher) -> list[CapturedExchange]:
    return [e for e in store.exchanges if matcher.matches(*_split_target(e))]


def _checksum_pattern(store: SessionStore, matcher: Matcher) -> bool:
    """Does a short, repetitive sibling endpoint lead the data requests?"""
    data_times = [
        e.monotonic_time for e in store.exchanges if matcher.matches(*_split_target(e))
    ]
    if len(data_times) < 2:
        return False
    parent = matcher.path.rsplit("/", 1)[0]
    groups: dict[tuple[str, str], list[CapturedExchange]] = {}
    for e in store.exchanges:
        method, path, _ = _split_target(e)
        if path != matcher.path and path.startswith(parent):
            groups.setdefault((method, path), []).append(e)
    for candidates in groups.values():
        if len(candidates) < 2:
            continue
        bodies = [c.response.body for c in candidates]
        if any(len(b) > CHECKSUM_MAX_BODY_BYTES for b in bodies):
            continue
        if len(set(bodies)) == len(bodies):
            continue  # never repeats, unlike a checksum poll
        led = sum(
            1
            for t in data_times
            if any(0 <= t - c.monotonic_time <= CHECKSUM_LEAD_SECONDS for c in candidates)
        )
        if led >= 2:
            return True
    return False


def assess_caching(
    store: SessionStore,
    matcher: Matcher,
    marker_visible: bool | None = None,
    restart_clears_cache: bool | None = None,
    window_seconds: float = DEFAULT_OBSERVATION_WINDOW,
) -> CachingAssessment:
    """Judge the client's caching behavior for one endpoint.

    `marker_visible` and `restart_clears_cache` are operator-entered: did
    the sentinel string served by a marker edit show up in the client, and
    did a client restart bring fresh data. Without any operator input the
    traffic shape alone can only raise suspicion, never settle a verdict.
    """
    hits = _matching_exchanges(store, matcher)
    mutated = [e for e in hits if e.origin is Origin.MUTATED_LOCAL]
    if not mutated and len(hits) < 2:
        raise InsufficientEvidence(
            "need a mutated exchange or at least two repeated actions on the matcher"
        )
    if restart_clears_cache:
        return CachingAssessment(
            CachingVerdict.SESSION_SCOPED, False, "client restart cleared the cached data"
        )
    if marker_visible is True:
        return CachingAssessment(
            CachingVerdict.NONE, False, "mutated marker appeared promptly in the client"
        )
    has_checksum_pair = _checksum_pattern(store, matcher)
    if marker_visible is False:
        if has_checksum_pair:
            return CachingAssessment(
                CachingVerdict.HASH_BASED,
                True,
                "marker hidden; a short repeated sibling request precedes each data fetch",
            )
        last_mutated = max(e.monotonic_time for e in mutated) if mutated else None
        if last_mutated is not None:
            fresh = [e for e in hits if e.monotonic_time > last_mutated]
            if not fresh:
                return CachingAssessment(
                    CachingVerdict.TIME_BASED,
                    True,
                    "marker hidden and no fresh request followed the repeat action",
                )
        return CachingAssessment(
            CachingVerdict.UNKNOWN,
            True,
            "marker hidden but the client kept re-requesting; behavior unclear",
        )
    if has_checksum_pair:
        return CachingAssessment(
            CachingVerdict.HASH_BASED,
            True,
            "a short repeated sibling request precedes each data fetch",
        )
    return CachingAssessment(
        CachingVerdict.UNKNOWN, True, "no operator probe result; traffic shape inconclusive"
    )


# ---------------------------------------------------------------------------
# Target profiles
# ---------------------------------------------------------------------------

@dataclass
class TargetProfile:
    """What we know about one endpoint under test."""

    target_name: str
    caching: CachingVerdict = CachingVerdict.UNKNOWN
    caching_suspected: bool = False
    versioning: VersioningInfo = field(default_factory=VersioningInfo)
    notes: str = ""

    def to_dict(self) -> dict:
        return {
            "target_name": self.target_name,
            "caching": self.caching.value,
            "caching_suspected": self.caching_suspected,
            "versioning": self.versioning.to_dict(),
            "notes": self.notes,
        }


def profile_from_dict(data: dict) -> TargetProfile:
    if not isinstance(data, dict):
        raise ValueError("profile must be an object")
    unknown = set(data) - {
        "target_name",
        "caching",
        "caching_suspected",
        "versioning",
        "notes",
    }
    if unknown:
        raise ValueError(f"unknown profile fields: {sorted(unknown)}")
    name = data.get("target_name")
    if not isinstance(name, str) or not name:
        raise ValueError("profile requires a non-empty target_name")
    try:
        caching = CachingVerdict(data.get("caching", "unknown"))
    except ValueError:
        raise ValueError(f"unknown caching verdict {data.get('caching')!r}") from None
    versioning = VersioningInfo()
    if "versioning" in data:
        raw = data["versioning"]
        if not isinstance(raw, dict):
            raise ValueError("versioning must be an object")
        try:
            versioning = VersioningInfo(
                VersioningScheme(raw.get("scheme", "none_detected")),
                raw.get("token", ""),
            )
        except ValueError as exc:
            raise ValueError(f"bad versioning info: {exc}") from None
    return TargetProfile(
        target_name=name,
        caching=caching,
        caching_suspected=bool(data.get("caching_suspected", False)),
        versioning=versioning,
        notes=str(data.get("notes", "")),
    )


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------

def record_observation(
    store: SessionStore,
    exchange_id: int,
    behavior: Behavior,
    note: str = "",
    mutation: MutationSpec | None = None,
    window_seconds: float = DEFAULT_OBSERVATION_WINDOW,
    client_aborted: bool = False,
) -> ObservationRecord:
    """Attach a human-observed behavior to a mutated exchange.

    Auto-signals come from traffic that followed the exchange on the same
    action: how many retries landed inside the window, and how long the
    client waited before the first one.
    """
    exchange = store.get_exchange(exchange_id)
    if exchange is None:
        raise UnknownExchange(exchange_id)
    if exchange.origin is not Origin.MUTATED_LOCAL:
        raise NotMutated(f"exchange {exchange_id} came from upstream, not a mutation")
    later = sorted(
        (
            e.monotonic_time - exchange.monotonic_time
            for e in store.exchanges
            if e.monotonic_time > exchange.monotonic_time
            and e.request.method == exchange.request.method
            and e.request.target == exchange.request.target
        ),
    )
    signals = AutoSignals(
        retry_count=sum(1 for gap in later if gap <= window_seconds),
        seconds_to_next_request=later[0] if later else None,
        client_aborted=client_aborted,
    )
    return store.add_observation(
        ObservationRecord(
            exchange_id=exchange_id,
            behavior=behavior,
            mutation=mutation,
            note=note,
            auto_signals=signals,
        )
    )


# ---------------------------------------------------------------------------
# Campaign plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CampaignPlan:
    name: str
    matcher: Matcher
    steps: tuple[MutationSpec, ...]
    per_step_wait: float = 5.0

    def __post_init__(self):
        if not self.steps:
            raise InvalidCampaignPlan("a plan needs at least one step")
        if self.per_step_wait <= 0:
            raise InvalidCampaignPlan("per_step_wait must be positive")


def plan_to_dict(plan: CampaignPlan) -> dict:
    return {
        "name": plan.name,
        "matcher": plan.matcher.to_dict(),
        "steps": [spec_to_dict(s) for s in plan.steps],
        "per_step_wait": plan.per_step_wait,
    }


def plan_from_dict(data: dict) -> CampaignPlan:
    if not isinstance(data, dict):
        raise InvalidCampaignPlan("plan must be an object")
    unknown = set(data) - {"name", "matcher", "steps", "per_step_wait"}
    if unknown:
        raise InvalidCampaignPlan(f"unknown plan fields: {sorted(unknown)}")
    name = data.get("name")
    if not isinstance(name, str) or not name:
        raise InvalidCampaignPlan("plan requires a non-empty name")
    raw_matcher = data.get("matcher")
    if not isinstance(raw_matcher, dict) or not isinstance(raw_matcher.get("path"), str):
        raise InvalidCampaignPlan("plan requires a matcher object with a path")
    bad = set(raw_matcher) - {"path", "method", "query"}
    if bad:
        raise InvalidCampaignPlan(f"unknown matcher fields: {sorted(bad)}")
    matcher = Matcher(
        path=raw_matcher["path"],
        method=raw_matcher.get("method"),
        query=raw_matcher.get("query"),
    )
    raw_steps = data.get("steps")
    if not isinstance(raw_steps, list) or not raw_steps:
        raise InvalidCampaignPlan("plan requires a non-empty steps list")
    try:
        steps = tuple(spec_from_dict(s) for s in raw_steps)
    except Exception as exc:
        raise InvalidCampaignPlan(f"bad step: {exc}") from None
    wait = data.get("per_step_wait", 5.0)
    if not isinstance(wait, (int, float)) or isinstance(wait, bool) or wait <= 0:
        raise InvalidCampaignPlan("per_step_wait must be a positive number")
    return CampaignPlan(name=name, matcher=matcher, steps=steps, per_step_wait=float(wait))


def load_plan(path: str | Path) -> CampaignPlan:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidCampaignPlan(f"cannot read plan file: {exc}") from None
    return plan_from_dict(data)


# ---------------------------------------------------------------------------
# The runner
# ---------------------------------------------------------------------------

@dataclass
class StepResult:
    index: int
    spec: MutationSpec
    status: str  # "ok", "failed", or "no_client_action"
    exchange_id: int | None = None
    observed: bool = False
    error: str = ""


_active_matchers: set[tuple[str, str | None, str | None]] = set()
_active_lock = threading.Lock()


class CampaignRun:
    """Handle on a running (or finished) campaign."""

    def __init__(self, plan: CampaignPlan):
        self.plan = plan
        self.results: list[StepResult] = []
        self.error: Exception | None = None
        self._done = threading.Event()

    @property
    def finished(self) -> bool:
        return self._done.is_set()

    def join(self, timeout: float | None = None) -> bool:
        return self._done.wait(timeout)


def run_campaign(
    plan: CampaignPlan,
    rules: RuleSet,
    store: SessionStore,
    events: EventLog,
    capture_timeout: float = DEFAULT_CAPTURE_TIMEOUT,
    poll_interval: float = 0.02,
    background: bool = True,
) -> CampaignRun:
    """Drive a plan against a live rule table.

    One plan per matcher at a time; a second concurrent plan on the same
    matcher is refused outright. With `background=False` the call returns
    only after the plan finishes, re-raising a missing-baseline failure.
    """
    key = (plan.matcher.path, plan.matcher.method, plan.matcher.query)
    with _active_lock:
        if key in _active_matchers:
            raise CampaignActive(f"a plan is already running for {plan.matcher}")
        _active_matchers.add(key)
    run = CampaignRun(plan)

    def drive() -> None:
        try:
            _drive_plan(run, plan, rules, store, events, capture_timeout, poll_interval)
        except CampaignError as exc:
            run.error = exc
        finally:
            with _active_lock:
                _active_matchers.discard(key)
            run._done.set()

    if background:
        threading.Thread(target=drive, daemon=True).start()
    else:
        drive()
        if run.error is not None:
            raise run.error
    return run


def _find_rule(rules: RuleSet, matcher: Matcher) -> Rule | None:
    for rule in rules.list():
        if rule.matcher == matcher:
            return rule
    return None


def _drive_plan(
    run: CampaignRun,
    plan: CampaignPlan,
    rules: RuleSet,
    store: SessionStore,
    events: EventLog,
    capture_timeout: float,
    poll_interval: float,
) -> None:
    rule = _find_rule(rules, plan.matcher)
    if rule is None:
        rule = rules.add(plan.matcher)
    if rule.baseline is None:
        # implicit capture: the client's next action supplies the baseline
        rules.arm_capture(rule.id)
        deadline = time.monotonic() + capture_timeout
        while True:
            rule = rules.get(rule.id)
            if rule is not None and rule.baseline is not None:
                break
            if rule is None or time.monotonic() >= deadline:
                raise NoBaseline(
                    f"no baseline captured for {plan.matcher} within {capture_timeout}s"
                )
            time.sleep(poll_interval)
    baseline = rule.baseline

    for index, spec in enumerate(plan.steps):
        events.append(
            "campaign-step",
            {"plan": plan.name, "step": index, "kind": spec.kind.value, "status": "started"},
        )
        try:
            # dry-run against the stored baseline so a doomed step fails
            # now instead of when the client is mid-action
            apply_mutation(baseline.body, baseline.format, spec, baseline.status)
        except MutationFailed as exc:
            result = StepResult(index=index, spec=spec, status="failed", error=str(exc))
            run.results.append(result)
            events.append(
                "campaign-step",
                {"plan": plan.name, "step": index, "status": "failed", "error": str(exc)},
            )
            continue
        rules.update(rule.id, mode=RuleMode.REWRITE, mutation=spec)
        last_exchange_id = max((e.id for e in store.exchanges), default=0)
        observations_before = len(store.observations)
        deadline = time.monotonic() + plan.per_step_wait
        exchange_id: int | None = None
        observed = False
        while time.monotonic() < deadline:
            if exchange_id is None:
                for e in store.exchanges:
                    if (
                        e.id > last_exchange_id
                        and e.rule_id == rule.id
                        and e.origin is Origin.MUTATED_LOCAL
                    ):
                        exchange_id = e.id
                        break
            if exchange_id is not None:
                new_obs = store.observations[observations_before:]
                if any(o.exchange_id == exchange_id for o in new_obs):
                    observed = True
                    break
            time.sleep(poll_interval)
        rules.update(rule.id, mode=RuleMode.PASS_THROUGH)
        status = "ok" if exchange_id is not None else "no_client_action"
        run.results.append(
            StepResult(
                index=index,
                spec=spec,
                status=status,
                exchange_id=exchange_id,
                observed=observed,
            )
        )
        events.append(
            "campaign-step",
            {
                "plan": plan.name,
                "step": index,
                "status": "ended",
                "outcome": status,
                "exchange_id": exchange_id,
                "observed": observed,
            },
        )
    rules.update(rule.id, mode=RuleMode.PASS_THROUGH, mutation=None)
    events.append("campaign-step", {"plan": plan.name, "status": "completed"})
