/**
 * Typed mirrors of the control API's JSON records.
 *
 * Field names follow the wire format exactly; anything optional on the wire
 * is optional here. Bodies travel base64-encoded, headers as [name, value]
 * pairs in original order.
 */

export type Origin = "upstream" | "mutated_local";

export type MutationKind =
  | "field_addition"
  | "field_removal"
  | "malformed_response"
  | "empty_response"
  | "type_change"
  | "format_disruption";

export type Behavior =
  | "normal_load"
  | "force_close"
  | "error_message"
  | "silent_failure"
  | "indefinite_loading"
  | "graceful_timeout";

export type RuleMode = "pass_through" | "capture_next" | "rewrite";

export type CachingVerdict = "none" | "time_based" | "hash_based" | "session_scoped" | "unknown";

export type VersioningScheme = "none_detected" | "url_path" | "semantic_in_url" | "media_type_header";

export const KIND_ORDER: readonly MutationKind[] = [
  "field_addition",
  "field_removal",
  "malformed_response",
  "empty_response",
  "type_change",
  "format_disruption",
];

export const KIND_TITLES: Record<MutationKind, string> = {
  field_addition: "Field Addition",
  field_removal: "Field Removal",
  malformed_response: "Malformed Response",
  empty_response: "Empty Response",
  type_change: "Changing Data Type",
  format_disruption: "Format Disruption",
};

// Button order on the observation form; the report sections instead run
// worst-first (see SEVERITY_ORDER).
export const BEHAVIOR_ORDER: readonly Behavior[] = [
  "normal_load",
  "force_close",
  "error_message",
  "silent_failure",
  "indefinite_loading",
  "graceful_timeout",
];

export const SEVERITY_ORDER: readonly Behavior[] = [
  "force_close",
  "indefinite_loading",
  "silent_failure",
  "error_message",
  "graceful_timeout",
  "normal_load",
];

export const BEHAVIOR_TITLES: Record<Behavior, string> = {
  force_close: "Force Close",
  indefinite_loading: "Indefinite Loading",
  silent_failure: "Silent Failure",
  error_message: "Error Message",
  graceful_timeout: "Graceful Timeout",
  normal_load: "Normal Load",
};

export const CACHING_TITLES: Record<CachingVerdict, string> = {
  none: "None",
  time_based: "Time-Based",
  hash_based: "Hash-Based",
  session_scoped: "Session-Scoped",
  unknown: "Unknown",
};

export const SCHEME_TITLES: Record<VersioningScheme, string> = {
  none_detected: "None Detected",
  url_path: "URL Path",
  semantic_in_url: "Semantic In URL",
  media_type_header: "Media-Type Header",
};

export interface MutationSpec {
  kind: MutationKind;
  targets?: string[];
  escalation_level?: number;
  added_count?: number;
  status_override?: number;
  seed?: number;
}

export interface Matcher {
  path: string;
  method?: string;
  query?: string;
}

export interface FlowMessage {
  headers: [string, string][];
  body: string; // base64
}

export interface FlowRequest extends FlowMessage {
  method: string;
  target: string;
}

export interface FlowResponse extends FlowMessage {
  status: number;
  reason: string;
}

export interface Flow {
  record: "exchange";
  id: number;
  wall_time: number;
  monotonic_time: number;
  origin: Origin;
  rule_id: number | null;
  request: FlowRequest;
  response: FlowResponse;
}

export interface FlowPage {
  record: "flow-page";
  total: number;
  offset: number;
  limit: number;
  flows: Flow[];
}

export interface RuleBaseline {
  exchange_id: number;
  status: number;
  format: "json" | "xml" | "opaque";
  body_bytes: number;
}

export interface Rule {
  record: "rule";
  id: number;
  matcher: Matcher;
  mode: RuleMode;
  mutation: MutationSpec | null;
  forward_and_discard: boolean;
  marker_edit: { path: string; sentinel: string } | null;
  baseline: RuleBaseline | null;
}

export interface RulePage {
  record: "rule-page";
  rules: Rule[];
}

export interface TargetList {
  record: "targets";
  rule_id: number;
  targets: string[];
}

export interface AutoSignals {
  retry_count: number;
  seconds_to_next_request: number | null;
  client_aborted: boolean;
}

export interface Observation {
  record: "observation";
  exchange_id: number;
  behavior: Behavior;
  mutation: MutationSpec | null;
  note: string;
  auto_signals?: AutoSignals;
}

export interface StreamEvent {
  record: "event";
  id: number;
  kind: string;
  time: number;
  data: Record<string, unknown>;
}

export interface TargetProfileData {
  target_name: string;
  caching: CachingVerdict;
  caching_suspected: boolean;
  versioning: { scheme: VersioningScheme; token: string };
  notes: string;
}

export interface Finding {
  mutation: MutationSpec;
  behavior: Behavior;
  note: string;
}

export interface TargetReportData {
  target_name: string;
  profile: TargetProfileData;
  findings: Finding[];
}

/** The second NDJSON line of GET /report?format=machine. */
export interface ReportData {
  record: "report";
  target_count: number;
  totals: Record<MutationKind, Record<Behavior, number>>;
  caching_counts: Record<CachingVerdict, number>;
  versioning_counts: Record<VersioningScheme, number>;
  per_target: TargetReportData[];
}
