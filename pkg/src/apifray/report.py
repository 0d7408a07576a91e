"""Fragility reports: cross-target tallies first, per-target findings second.

Aggregation collapses each target's observations to one behavior per
mutation kind (the most severe seen), so a kind's behavior counts can never
exceed the target count. The full observation list survives in the
per-target section. Three renderings: plain text and Markdown for humans,
and a machine form in the session-file record syntax that parses back to
an equal report.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

from .campaign import (
    CachingVerdict,
    TargetProfile,
    VersioningScheme,
    profile_from_dict,
)
from .mutation import (
    KIND_ORDER,
    KIND_TITLES,
    MutationFailed,
    MutationKind,
    MutationSpec,
    spec_from_dict,
    spec_to_dict,
)
from .session import (
    FORMAT_VERSION,
    SEVERITY_ORDER,
    Behavior,
    ObservationRecord,
    SessionFormatError,
    SessionStore,
    severity,
)


class InconsistentRecord(ValueError):
    """One exchange observed with two different behaviors."""


class ReportFormat(str, enum.Enum):
    PLAIN_TEXT = "text"
    MARKDOWN = "markdown"
    MACHINE = "machine"


BEHAVIOR_TITLES: dict[Behavior, str] = {
    Behavior.FORCE_CLOSE: "Force Close",
    Behavior.INDEFINITE_LOADING: "Indefinite Loading",
    Behavior.SILENT_FAILURE: "Silent Failure",
    Behavior.ERROR_MESSAGE: "Error Message",
    Behavior.GRACEFUL_TIMEOUT: "Graceful Timeout",
    Behavior.NORMAL_LOAD: "Normal Load",
}

CACHING_TITLES: dict[CachingVerdict, str] = {
    CachingVerdict.NONE: "None",
    CachingVerdict.TIME_BASED: "Time-Based",
    CachingVerdict.HASH_BASED: "Hash-Based",
    CachingVerdict.SESSION_SCOPED: "Session-Scoped",
    CachingVerdict.UNKNOWN: "Unknown",
}

SCHEME_TITLES: dict[VersioningScheme, str] = {
    VersioningScheme.NONE_DETECTED: "None Detected",
    VersioningScheme.URL_PATH: "URL Path",
    VersioningScheme.SEMANTIC_IN_URL: "Semantic In URL",
    VersioningScheme.MEDIA_TYPE_HEADER: "Media-Type Header",
}


@dataclass(frozen=True)
class Finding:
    mutation: MutationSpec
    behavior: Behavior
    note: str = ""


@dataclass(frozen=True)
class TargetReport:
    target_name: str
    findings: tuple[Finding, ...]
    profile: TargetProfile


@dataclass(frozen=True)
class FragilityReport:
    target_count: int
    totals: dict[MutationKind, dict[Behavior, int]]
    caching_counts: dict[CachingVerdict, int]
    versioning_counts: dict[VersioningScheme, int]
    per_target: tuple[TargetReport, ...]


def _empty_totals() -> dict[MutationKind, dict[Behavior, int]]:
    return {kind: {behavior: 0 for behavior in SEVERITY_ORDER} for kind in KIND_ORDER}


def aggregate(
    observations_by_target: Mapping[str, Sequence[ObservationRecord]],
    profiles: Mapping[str, TargetProfile] | None = None,
) -> FragilityReport:
    """Fold per-target observations into the two-part report.

    Every observation must carry its mutation spec; the target's worst
    behavior per mutation kind feeds the totals. Profiles fill the caching
    and versioning tallies; targets without one count as Unknown and
    NoneDetected.
    """
    profiles = dict(profiles or {})
    names = sorted(set(observations_by_target) | set(profiles))
    totals = _empty_totals()
    per_target: list[TargetReport] = []
    caching_counts = {verdict: 0 for verdict in CachingVerdict}
    versioning_counts = {scheme: 0 for scheme in VersioningScheme}

    for name in names:
        observations = list(observations_by_target.get(name, ()))
        behavior_by_exchange: dict[int, Behavior] = {}
        for obs in observations:
            if obs.mutation is None:
                raise ValueError(
                    f"target {name}: observation on exchange {obs.exchange_id} "
                    "carries no mutation"
                )
            previous = behavior_by_exchange.get(obs.exchange_id)
            if previous is not None and previous is not obs.behavior:
                raise InconsistentRecord(
                    f"target {name}: exchange {obs.exchange_id} observed as both "
                    f"{previous.value} and {obs.behavior.value}"
                )
            behavior_by_exchange[obs.exchange_id] = obs.behavior
        worst: dict[MutationKind, Behavior] = {}
        for obs in observations:
            kind = obs.mutation.kind
            current = worst.get(kind)
            if current is None or severity(obs.behavior) < severity(current):
                worst[kind] = obs.behavior
        for kind, behavior in worst.items():
            totals[kind][behavior] += 1
        findings = tuple(
            Finding(obs.mutation, obs.behavior, obs.note)
            for obs in sorted(
                observations, key=lambda o: (o.exchange_id, severity(o.behavior), o.note)
            )
        )
        profile = profiles.get(name) or TargetProfile(target_name=name)
        caching_counts[profile.caching] += 1
        versioning_counts[profile.versioning.scheme] += 1
        per_target.append(TargetReport(name, findings, profile))

    return FragilityReport(
        target_count=len(names),
        totals=totals,
        caching_counts=caching_counts,
        versioning_counts=versioning_counts,
        per_target=tuple(per_target),
    )


def observations_by_endpoint(store: SessionStore) -> dict[str, list[ObservationRecord]]:
    """Group a session's observations by the endpoint path they were made on."""
    grouped: dict[str, list[ObservationRecord]] = {}
    for obs in store.observations:
        exchange = store.get_exchange(obs.exchange_id)
        path = exchange.request.target.partition("?")[0] if exchange else "(unknown)"
        grouped.setdefault(path, []).append(obs)
    return grouped


# ---------------------------------------------------------------------------
# Codec
# ---------------------------------------------------------------------------

def report_to_dict(report: FragilityReport) -> dict:
    return {
        "target_count": report.target_count,
        "totals": {
            kind.value: {
                behavior.value: report.totals[kind][behavior] for behavior in SEVERITY_ORDER
            }
            for kind in KIND_ORDER
        },
        "caching_counts": {v.value: report.caching_counts[v] for v in CachingVerdict},
        "versioning_counts": {
            s.value: report.versioning_counts[s] for s in VersioningScheme
        },
        "per_target": [
            {
                "target_name": tr.target_name,
                "profile": tr.profile.to_dict(),
                "findings": [
                    {
                        "mutation": spec_to_dict(f.mutation),
                        "behavior": f.behavior.value,
                        "note": f.note,
                    }
                    for f in tr.findings
                ],
            }
            for tr in report.per_target
        ],
    }


def report_from_dict(data: dict) -> FragilityReport:
    if not isinstance(data, dict):
        raise ValueError("report must be an object")
    try:
        totals = _empty_totals()
        for kind_name, row in data["totals"].items():
            kind = MutationKind(kind_name)
            for behavior_name, count in row.items():
                totals[kind][Behavior(behavior_name)] = int(count)
        caching_counts = {verdict: 0 for verdict in CachingVerdict}
        for name, count in data["caching_counts"].items():
            caching_counts[CachingVerdict(name)] = int(count)
        versioning_counts = {scheme: 0 for scheme in VersioningScheme}
        for name, count in data["versioning_counts"].items():
            versioning_counts[VersioningScheme(name)] = int(count)
        per_target = tuple(
            TargetReport(
                target_name=raw["target_name"],
                findings=tuple(
                    Finding(
                        mutation=spec_from_dict(f["mutation"]),
                        behavior=Behavior(f["behavior"]),
                        note=str(f.get("note", "")),
                    )
                    for f in raw.get("findings", [])
                ),
                profile=profile_from_dict(raw["profile"]),
            )
            for raw in data.get("per_target", [])
        )
        return FragilityReport(
            target_count=int(data["target_count"]),
            totals=totals,
            caching_counts=caching_counts,
            versioning_counts=versioning_counts,
            per_target=per_target,
        )
    except (KeyError, TypeError, ValueError, MutationFailed) as exc:
        raise ValueError(f"bad report shape: {exc}") from None


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _md_cell(text: str) -> str:
    return text.replace("|", "\\|").replace("\n", " ")


def _spec_label(spec: MutationSpec) -> str:
    label = KIND_TITLES[spec.kind]
    details = []
    if spec.targets:
        details.append("targets " + ", ".join(p.render() for p in spec.targets))
    if spec.escalation_level is not None:
        details.append(f"level {spec.escalation_level}")
    if spec.status_override is not None:
        details.append(f"status {spec.status_override}")
    if details:
        return f"{label} ({'; '.join(details)})"
    return label


def _profile_lines(profile: TargetProfile) -> list[str]:
    caching = CACHING_TITLES[profile.caching]
    if profile.caching_suspected:
        caching += " (suspected)"
    versioning = SCHEME_TITLES[profile.versioning.scheme]
    if profile.versioning.token:
        versioning += f" ({profile.versioning.token})"
    lines = [f"Caching: {caching}", f"Versioning: {versioning}"]
    if profile.notes:
        lines.append(f"Notes: {profile.notes}")
    return lines


def _render_markdown(report: FragilityReport) -> str:
    out: list[str] = ["# Fragility Report", ""]
    out.append(f"Targets under test: {report.target_count}")
    out.append("")
    out.append("## Behavior Overview")
    out.append("")
    for behavior in SEVERITY_ORDER:
        out.append(f"### {BEHAVIOR_TITLES[behavior]}")
        out.append("")
        out.append("| Mutation | Targets |")
        out.append("| --- | --- |")
        for kind in KIND_ORDER:
            out.append(f"| {KIND_TITLES[kind]} | {report.totals[kind][behavior]} |")
        out.append("")
    out.append("### Caching")
    out.append("")
    out.append("| Verdict | Targets |")
    out.append("| --- | --- |")
    for verdict in CachingVerdict:
        out.append(f"| {CACHING_TITLES[verdict]} | {report.caching_counts[verdict]} |")
    out.append("")
    out.append("### Versioning")
    out.append("")
    out.append("| Scheme | Targets |")
    out.append("| --- | --- |")
    for scheme in VersioningScheme:
        out.append(f"| {SCHEME_TITLES[scheme]} | {report.versioning_counts[scheme]} |")
    out.append("")
    out.append("## Targets")
    out.append("")
    for tr in report.per_target:
        out.append(f"### {tr.target_name}")
        out.append("")
        for line in _profile_lines(tr.profile):
            out.append(f"- {line}")
        out.append("")
        if tr.findings:
            out.append("| Mutation | Behavior | Note |")
            out.append("| --- | --- | --- |")
            for f in tr.findings:
                out.append(
                    f"| {_md_cell(_spec_label(f.mutation))} "
                    f"| {BEHAVIOR_TITLES[f.behavior]} "
                    f"| {_md_cell(f.note)} |"
                )
        else:
            out.append("No findings recorded.")
        out.append("")
    return "\n".join(out)


def _render_plain(report: FragilityReport) -> str:
    width = max(len(t) for t in KIND_TITLES.values()) + 2
    out: list[str] = ["FRAGILITY REPORT", "=" * 16, ""]
    out.append(f"Targets under test: {report.target_count}")
    out.append("")
    out.append("BEHAVIOR OVERVIEW")
    for behavior in SEVERITY_ORDER:
        out.append("")
        out.append(f"  {BEHAVIOR_TITLES[behavior]}")
        for kind in KIND_ORDER:
            count = report.totals[kind][behavior]
            out.append(f"    {KIND_TITLES[kind]:<{width}} {count}")
    out.append("")
    out.append("CACHING")
    for verdict in CachingVerdict:
        out.append(f"  {CACHING_TITLES[verdict]:<{width}} {report.caching_counts[verdict]}")
    out.append("")
    out.append("VERSIONING")
    for scheme in VersioningScheme:
        out.append(f"  {SCHEME_TITLES[scheme]:<{width}} {report.versioning_counts[scheme]}")
    out.append("")
    out.append("TARGETS")
    for tr in report.per_target:
        out.append("")
        out.append(f"  {tr.target_name}")
        for line in _profile_lines(tr.profile):
            out.append(f"    {line}")
        if tr.findings:
            for f in tr.findings:
                note = f" -- {f.note}" if f.note else ""
                out.append(
                    f"    {_spec_label(f.mutation)}: {BEHAVIOR_TITLES[f.behavior]}{note}"
                )
        else:
            out.append("    no findings recorded")
    out.append("")
    return "\n".join(out)


def render_report(report: FragilityReport, fmt: ReportFormat) -> bytes:
    if fmt is ReportFormat.MARKDOWN:
        return _render_markdown(report).encode("utf-8")
    if fmt is ReportFormat.PLAIN_TEXT:
        return _render_plain(report).encode("utf-8")
    if fmt is ReportFormat.MACHINE:
        header = json.dumps({"record": "header", "format_version": FORMAT_VERSION})
        body = json.dumps(
            {"record": "report", **report_to_dict(report)}, ensure_ascii=False
        )
        return (header + "\n" + body + "\n").encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")


def parse_machine_report(data: bytes) -> FragilityReport:
    """Read back a Machine rendering; inverse of render_report(…, MACHINE)."""
    lines = [line for line in data.decode("utf-8").splitlines() if line.strip()]
    if not lines:
        raise SessionFormatError("empty report document")
    records = []
    for number, line in enumerate(lines, start=1):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise SessionFormatError(f"line {number}: {exc.msg}") from None
    head = records[0]
    if not isinstance(head, dict) or head.get("record") != "header":
        raise SessionFormatError("first line must be the header record")
    if head.get("format_version") != FORMAT_VERSION:
        raise SessionFormatError(
            f"unsupported format version {head.get('format_version')!r}"
        )
    for record in records[1:]:
        if isinstance(record, dict) and record.get("record") == "report":
            payload = {k: v for k, v in record.items() if k != "record"}
            try:
                return report_from_dict(payload)
            except ValueError as exc:
                raise SessionFormatError(str(exc)) from None
    raise SessionFormatError("no report record found")
