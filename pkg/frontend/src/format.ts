// Small display helpers shared by the panels.

import { KIND_TITLES, type MutationSpec } from "./types";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function fmtClock(epochSeconds: number): string {
  const d = new Date(epochSeconds * 1000);
  const pad = (n: number) => String(n).padStart(2, "0");
  return `${pad(d.getHours())}:${pad(d.getMinutes())}:${pad(d.getSeconds())}`;
}

export function fmtSize(bytes: number): string {
  if (bytes < 1024) return `${bytes} B`;
  if (bytes < 1024 * 1024) return `${(bytes / 1024).toFixed(1)} KB`;
  return `${(bytes / (1024 * 1024)).toFixed(1)} MB`;
}

export function fmtSeconds(value: number | null): string {
  if (value === null) return "none";
  return `${value.toFixed(2)} s`;
}

/** Human label for a mutation, mirroring the server's report wording. */
export function describeSpec(spec: MutationSpec): string {
  const details: string[] = [];
  if (spec.targets !== undefined && spec.targets.length > 0) {
    details.push(`targets ${spec.targets.join(" ")}`);
  }
  if (spec.escalation_level !== undefined) details.push(`level ${spec.escalation_level}`);
  if (spec.added_count !== undefined) details.push(`add ${spec.added_count}`);
  if (spec.status_override !== undefined) details.push(`status ${spec.status_override}`);
  if (spec.seed !== undefined) details.push(`seed ${spec.seed}`);
  const title = KIND_TITLES[spec.kind] ?? spec.kind;
  return details.length > 0 ? `${title} (${details.join(", ")})` : title;
}

/** Response format as shown in the flow table, sniffed from Content-Type. */
export function sniffFormat(headers: [string, string][]): string {
  for (const [name, value] of headers) {
    if (name.toLowerCase() === "content-type") {
      const lowered = value.toLowerCase();
      if (lowered.includes("json")) return "json";
      if (lowered.includes("xml")) return "xml";
      if (lowered.startsWith("text/")) return "text";
      return "binary";
    }
  }
  return "?";
}
