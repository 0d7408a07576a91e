import type { Flow, ReportData, Rule, StreamEvent } from "./types";

/**
 * Dashboard state. Events mutate it through applyEvent, which returns the
 * follow-up fetches the caller should run; the store itself never talks to
 * the network, so the reducer is testable without a server.
 */

export type Effect =
  | { type: "fetch-flow"; id: number }
  | { type: "fetch-rule"; id: number }
  | { type: "drop-rule"; id: number };

export interface Notice {
  kind: string;
  text: string;
  time: number;
}

const NOTICE_LIMIT = 50;

export class Store {
  flows: Flow[] = [];
  rules = new Map<number, Rule>();
  report: ReportData | null = null;
  selectedFlowId: number | null = null;
  selectedPath: string | null = null;
  connected = false;
  notices: Notice[] = [];

  private flowIds = new Set<number>();
  private listeners = new Set<() => void>();

  subscribe(listener: () => void): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  notify(): void {
    for (const fn of this.listeners) fn();
  }

  applyEvent(event: StreamEvent): Effect[] {
    const effects: Effect[] = [];
    const data = event.data;
    switch (event.kind) {
      case "flow-recorded": {
        const id = data.exchange_id;
        if (typeof id === "number" && !this.flowIds.has(id)) {
          effects.push({ type: "fetch-flow", id });
        }
        break;
      }
      case "rule-changed": {
        const id = data.rule_id;
        if (typeof id === "number") {
          if (data.action === "deleted") {
            effects.push({ type: "drop-rule", id });
          } else {
            effects.push({ type: "fetch-rule", id });
          }
        }
        break;
      }
      case "baseline-captured": {
        const id = data.rule_id;
        if (typeof id === "number") {
          effects.push({ type: "fetch-rule", id });
        }
        this.pushNotice(event, `baseline captured for rule ${String(data.rule_id)}`);
        break;
      }
      case "warning":
      case "mutation-failed":
        this.pushNotice(event, String(data.message ?? event.kind));
        break;
      case "campaign-step":
        this.pushNotice(event, `campaign ${String(data.plan ?? "?")}: ${String(data.status ?? data.kind ?? "step")}`);
        break;
      case "tunnel-opened":
        this.pushNotice(event, `CONNECT tunnel refused for ${String(data.target ?? "?")}`);
        break;
      case "profile-changed":
        // fingerprints feed the report view, which refreshes on demand
        break;
      default:
        break;
    }
    return effects;
  }

  private pushNotice(event: StreamEvent, text: string): void {
    this.notices.push({ kind: event.kind, text, time: event.time });
    if (this.notices.length > NOTICE_LIMIT) {
      this.notices.splice(0, this.notices.length - NOTICE_LIMIT);
    }
  }

  upsertFlow(flow: Flow): void {
    if (this.flowIds.has(flow.id)) {
      const at = this.flows.findIndex((f) => f.id === flow.id);
      if (at >= 0) this.flows[at] = flow;
      return;
    }
    this.flowIds.add(flow.id);
    this.flows.push(flow);
    // events can race the initial page load, keep id order authoritative
    if (this.flows.length > 1) {
      const prev = this.flows[this.flows.length - 2];
      if (prev !== undefined && prev.id > flow.id) {
        this.flows.sort((a, b) => a.id - b.id);
      }
    }
  }

  upsertRule(rule: Rule): void {
    this.rules.set(rule.id, rule);
  }

  dropRule(id: number): void {
    this.rules.delete(id);
  }

  flowById(id: number): Flow | undefined {
    return this.flows.find((f) => f.id === id);
  }

  /** Rule whose matcher is exactly this path (no method or query pin). */
  ruleForPath(path: string): Rule | undefined {
    for (const rule of this.rules.values()) {
      const m = rule.matcher;
      if (m.path === path && m.method === undefined && m.query === undefined) {
        return rule;
      }
    }
    return undefined;
  }

  /** Newest mutated flow whose request path matches, for the observation form. */
  latestMutatedFlow(path: string): Flow | undefined {
    for (let i = this.flows.length - 1; i >= 0; i--) {
      const flow = this.flows[i];
      if (flow === undefined) continue;
      if (flow.origin !== "mutated_local") continue;
      if (pathOf(flow.request.target) === path) return flow;
    }
    return undefined;
  }

  /** Distinct request paths seen so far, newest first, for the endpoint picker. */
  knownPaths(): string[] {
    const seen = new Set<string>();
    const out: string[] = [];
    for (let i = this.flows.length - 1; i >= 0; i--) {
      const flow = this.flows[i];
      if (flow === undefined) continue;
      const path = pathOf(flow.request.target);
      if (!seen.has(path)) {
        seen.add(path);
        out.push(path);
      }
    }
    for (const rule of this.rules.values()) {
      if (!seen.has(rule.matcher.path)) {
        seen.add(rule.matcher.path);
        out.push(rule.matcher.path);
      }
    }
    return out;
  }

  /** Baseline flow for a mutated one, via its rule, when both are loaded. */
  baselineFor(flow: Flow): Flow | undefined {
    if (flow.rule_id === null) return undefined;
    const rule = this.rules.get(flow.rule_id);
    if (rule === undefined || rule.baseline === null) return undefined;
    return this.flowById(rule.baseline.exchange_id);
  }
}

export function pathOf(target: string): string {
  const noQuery = target.split("?", 1)[0] ?? target;
  // absolute-form proxy targets carry scheme and host; strip to the path
  const match = /^[a-z][a-z0-9+.-]*:\/\/[^/]*(\/.*)?$/i.exec(noQuery);
  if (match !== null) return match[1] ?? "/";
  return noQuery;
}
