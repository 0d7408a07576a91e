import type {
  Behavior,
  Flow,
  FlowPage,
  Matcher,
  MutationSpec,
  Observation,
  ReportData,
  Rule,
  RulePage,
  TargetList,
} from "./types";

export interface ClientConfig {
  /** Control API origin, e.g. http://127.0.0.1:8791 (no trailing slash). */
  baseUrl: string;
  token: string;
  /** Injectable for tests; defaults to the ambient fetch. */
  fetchImpl?: typeof fetch;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

/**
 * Thin typed client for the control API. Every method maps to one endpoint;
 * the UI keeps no state the server cannot return.
 */
export class ControlClient {
  private readonly base: string;
  private readonly token: string;
  private readonly doFetch: typeof fetch;

  constructor(config: ClientConfig) {
    this.base = config.baseUrl.replace(/\/+$/, "") + "/__control/v1";
    this.token = config.token;
    this.doFetch = config.fetchImpl ?? fetch;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = {
      method,
      headers: { Authorization: `Bearer ${this.token}` },
    };
    if (body !== undefined) {
      init.headers = { ...init.headers, "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.doFetch(`${this.base}${path}`, init);
    const text = await resp.text();
    if (!resp.ok) {
      let detail = text;
      try {
        detail = (JSON.parse(text) as { message?: string }).message ?? text;
      } catch {
        // non-JSON error body, keep raw text
      }
      throw new ApiError(resp.status, `${method} ${path}: ${resp.status} ${detail}`);
    }
    return JSON.parse(text) as T;
  }

  ping(): Promise<{ record: string; version: number }> {
    return this.request("GET", "");
  }

  flows(offset = 0, limit = 100): Promise<FlowPage> {
    return this.request("GET", `/flows?offset=${offset}&limit=${limit}`);
  }

  flow(id: number): Promise<Flow> {
    return this.request("GET", `/flows/${id}`);
  }

  rules(): Promise<RulePage> {
    return this.request("GET", "/rules");
  }

  rule(id: number): Promise<Rule> {
    return this.request("GET", `/rules/${id}`);
  }

  createRule(matcher: Matcher): Promise<Rule & { rule_id: number }> {
    return this.request("POST", "/rules", { matcher });
  }

  updateRule(
    id: number,
    patch: { mode?: string; mutation?: MutationSpec | null },
  ): Promise<Rule> {
    return this.request("PATCH", `/rules/${id}`, patch);
  }

  armCapture(id: number): Promise<Rule> {
    return this.request("POST", `/rules/${id}/capture-next`);
  }

  /** Removable field paths of the rule's baseline; 409 until one is captured. */
  targets(id: number): Promise<TargetList> {
    return this.request("GET", `/rules/${id}/targets`);
  }

  observe(input: {
    exchange_id: number;
    behavior: Behavior;
    note?: string;
    window_seconds?: number;
    client_aborted?: boolean;
  }): Promise<Observation> {
    return this.request("POST", "/observations", input);
  }

  async report(): Promise<ReportData> {
    const resp = await this.doFetch(`${this.base}/report?format=machine`, {
      headers: { Authorization: `Bearer ${this.token}` },
    });
    const text = await resp.text();
    if (!resp.ok) {
      throw new ApiError(resp.status, `GET /report: ${resp.status} ${text}`);
    }
    const lines = text.split("\n").filter((l) => l.trim() !== "");
    for (const line of lines) {
      const record = JSON.parse(line) as { record: string };
      if (record.record === "report") {
        return record as ReportData;
      }
    }
    throw new ApiError(502, "report stream held no report record");
  }

  /** URL of the NDJSON event feed; consumed by the stream reader, not fetch-and-parse. */
  eventsUrl(since: number): string {
    return `${this.base}/events?since=${since}`;
  }

  authHeader(): Record<string, string> {
    return { Authorization: `Bearer ${this.token}` };
  }
}
