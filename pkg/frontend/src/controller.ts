import { ApiError, ControlClient, type ClientConfig } from "./api";
import { EventStream } from "./events";
import { pathOf, Store, type Effect } from "./store";
import type { Behavior, MutationSpec, Observation, Rule } from "./types";

/**
 * Glue between the control API and the panels.
 *
 * The store is the single source of truth and every method here ends by
 * refreshing it from the server or applying the server's response, so the
 * UI never holds state the API would not return (rules and observations
 * round-trip unchanged).
 */
export class App {
  readonly store = new Store();
  readonly client: ControlClient;
  readonly targetsByRule = new Map<number, string[]>();

  private readonly stream: EventStream;
  private readonly fetchImpl: typeof fetch;
  private readonly pendingRules = new Map<string, Promise<Rule>>();

  constructor(config: ClientConfig) {
    this.client = new ControlClient(config);
    this.fetchImpl = config.fetchImpl ?? fetch;
    this.stream = new EventStream(
      this.client,
      (event) => {
        const effects = this.store.applyEvent(event);
        void this.runEffects(effects);
        this.store.notify();
      },
      (connected) => {
        if (this.store.connected !== connected) {
          this.store.connected = connected;
          this.store.notify();
        }
      },
      this.fetchImpl,
    );
  }

  async start(): Promise<void> {
    await this.client.ping();
    const rulePage = await this.client.rules();
    for (const rule of rulePage.rules) this.store.upsertRule(rule);
    // newest page is enough on boot; the stream back-fills anything later
    const first = await this.client.flows(0, 1);
    const total = first.total;
    const offset = Math.max(0, total - 200);
    const page = await this.client.flows(offset, 200);
    for (const flow of page.flows) this.store.upsertFlow(flow);
    this.stream.start();
    this.store.notify();
  }

  stop(): void {
    this.stream.stop();
  }

  private async runEffects(effects: Effect[]): Promise<void> {
    for (const effect of effects) {
      try {
        if (effect.type === "fetch-flow") {
          this.store.upsertFlow(await this.client.flow(effect.id));
        } else if (effect.type === "fetch-rule") {
          const rule = await this.client.rule(effect.id);
          this.store.upsertRule(rule);
          if (rule.baseline !== null && !this.targetsByRule.has(rule.id)) {
            await this.loadTargets(rule);
          }
        } else {
          this.store.dropRule(effect.id);
          this.targetsByRule.delete(effect.id);
        }
      } catch (err) {
        this.noteError(err);
      }
    }
    if (effects.length > 0) this.store.notify();
  }

  selectFlow(id: number | null): void {
    this.store.selectedFlowId = id;
    const flow = id === null ? undefined : this.store.flowById(id);
    if (flow !== undefined) {
      this.store.selectedPath = pathOf(flow.request.target);
      void this.ensureBaselineLoaded(flow.rule_id);
    }
    this.store.notify();
  }

  selectPath(path: string): void {
    this.store.selectedPath = path;
    this.store.notify();
  }

  /** The detail pane diffs against the baseline flow, which may predate boot. */
  private async ensureBaselineLoaded(ruleId: number | null): Promise<void> {
    if (ruleId === null) return;
    const rule = this.store.rules.get(ruleId);
    if (rule === undefined || rule.baseline === null) return;
    if (this.store.flowById(rule.baseline.exchange_id) !== undefined) return;
    try {
      this.store.upsertFlow(await this.client.flow(rule.baseline.exchange_id));
      this.store.notify();
    } catch (err) {
      this.noteError(err);
    }
  }

  /** Existing exact-path rule, or a fresh pass-through one. */
  async ensureRule(path: string): Promise<Rule> {
    const known = this.store.ruleForPath(path);
    if (known !== undefined) return known;
    // two quick clicks must not create two rules for the same matcher
    const pending = this.pendingRules.get(path);
    if (pending !== undefined) return pending;
    const creating = (async () => {
      try {
        const created = await this.client.createRule({ path });
        this.store.upsertRule(created);
        this.store.notify();
        return created;
      } finally {
        this.pendingRules.delete(path);
      }
    })();
    this.pendingRules.set(path, creating);
    return creating;
  }

  async captureNext(path: string): Promise<void> {
    const rule = await this.ensureRule(path);
    const armed = await this.client.armCapture(rule.id);
    this.store.upsertRule(armed);
    this.store.notify();
  }

  /**
   * Post the picked mutation and flip the rule to rewrite. Without a
   * baseline the server answers 409; arm capture instead and keep the
   * spec, matching what a tester on the CLI gets.
   */
  async activateMutation(path: string, spec: MutationSpec): Promise<"active" | "armed"> {
    const rule = await this.ensureRule(path);
    await this.client.updateRule(rule.id, { mutation: spec });
    try {
      const updated = await this.client.updateRule(rule.id, { mode: "rewrite" });
      this.store.upsertRule(updated);
      this.store.notify();
      return "active";
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        const armed = await this.client.armCapture(rule.id);
        this.store.upsertRule(armed);
        this.store.notify();
        return "armed";
      }
      throw err;
    }
  }

  async clearRule(path: string): Promise<void> {
    const rule = this.store.ruleForPath(path);
    if (rule === undefined) return;
    const updated = await this.client.updateRule(rule.id, {
      mode: "pass_through",
      mutation: null,
    });
    this.store.upsertRule(updated);
    this.store.notify();
  }

  /** Removable paths of the baseline; empty until a baseline exists. */
  async loadTargets(rule: Rule): Promise<string[]> {
    try {
      const list = await this.client.targets(rule.id);
      this.targetsByRule.set(rule.id, list.targets);
      this.store.notify();
      return list.targets;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.targetsByRule.set(rule.id, []);
        return [];
      }
      throw err;
    }
  }

  /** Bind the observation to the newest mutated flow on the selected path. */
  async submitObservation(
    behavior: Behavior,
    note: string,
    clientAborted: boolean,
  ): Promise<Observation> {
    const path = this.store.selectedPath;
    if (path === null) throw new Error("pick an endpoint first");
    const flow = this.store.latestMutatedFlow(path);
    if (flow === undefined) {
      throw new Error(`no mutated flow recorded for ${path} yet`);
    }
    const observation = await this.client.observe({
      exchange_id: flow.id,
      behavior,
      note,
      client_aborted: clientAborted,
    });
    this.store.notify();
    return observation;
  }

  async refreshReport(): Promise<void> {
    this.store.report = await this.client.report();
    this.store.notify();
  }

  private noteError(err: unknown): void {
    const text = err instanceof Error ? err.message : String(err);
    this.store.notices.push({ kind: "ui-error", text, time: Date.now() / 1000 });
  }
}
