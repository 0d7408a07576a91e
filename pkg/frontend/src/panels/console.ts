import type { App } from "../controller";
import { describeSpec, escapeHtml } from "../format";
import { KIND_ORDER, KIND_TITLES, type MutationKind, type MutationSpec, type Rule } from "../types";

/**
 * Mutation console: pick an endpoint, capture its baseline, choose one of
 * the six operators, tune its parameters, and flip the rule to rewrite.
 *
 * Controls keep their values across renders by reading the live inputs
 * before rebuilding; the selected kind decides which parameter rows show.
 */
export class MutationConsole {
  private kind: MutationKind = "field_removal";
  private status = "";

  constructor(
    private readonly root: HTMLElement,
    private readonly app: App,
  ) {
    root.addEventListener("click", (event) => {
      const el = event.target as HTMLElement;
      const action = el.closest("[data-action]")?.getAttribute("data-action");
      if (action !== null && action !== undefined) void this.handle(action, el);
    });
    root.addEventListener("change", (event) => {
      const el = event.target as HTMLElement;
      if (el.id === "endpoint-pick") {
        const value = (el as HTMLSelectElement).value;
        if (value !== "") this.app.selectPath(value);
      }
    });
  }

  private async handle(action: string, el: HTMLElement): Promise<void> {
    try {
      switch (action) {
        case "use-endpoint": {
          const input = this.root.querySelector<HTMLInputElement>("#endpoint-input");
          const path = input?.value.trim() ?? "";
          if (path.startsWith("/")) {
            this.app.selectPath(path);
            await this.app.ensureRule(path);
            this.status = "";
          } else {
            this.status = "endpoint paths start with /";
            this.app.store.notify();
          }
          break;
        }
        case "capture": {
          const path = this.app.store.selectedPath;
          if (path === null) return;
          await this.app.captureNext(path);
          this.status = "capture armed: the next matching response becomes the baseline";
          this.app.store.notify();
          break;
        }
        case "pick-kind": {
          this.kind = (el.getAttribute("data-kind") ?? "field_removal") as MutationKind;
          this.app.store.notify();
          break;
        }
        case "activate": {
          const path = this.app.store.selectedPath;
          if (path === null) return;
          const outcome = await this.app.activateMutation(path, this.readSpec());
          this.status =
            outcome === "active"
              ? `rewriting with ${KIND_TITLES[this.kind]}`
              : "no baseline yet: capture armed, activate again after the next response";
          this.app.store.notify();
          break;
        }
        case "clear": {
          const path = this.app.store.selectedPath;
          if (path === null) return;
          await this.app.clearRule(path);
          this.status = "rule back to pass-through";
          this.app.store.notify();
          break;
        }
        default:
          break;
      }
    } catch (err) {
      this.status = err instanceof Error ? err.message : String(err);
      this.app.store.notify();
    }
  }

  /** Build the wire spec from whichever controls apply to the picked kind. */
  private readSpec(): MutationSpec {
    const spec: MutationSpec = { kind: this.kind };
    const picker = this.root.querySelector<HTMLSelectElement>("#target-pick");
    if (picker !== null && (this.kind === "field_removal" || this.kind === "type_change")) {
      const chosen = Array.from(picker.selectedOptions).map((o) => o.value);
      if (chosen.length > 0) spec.targets = chosen;
    }
    const level = this.numberInput("#level-input");
    if (this.kind === "field_removal" && spec.targets === undefined && level !== null) {
      spec.escalation_level = level;
    }
    const added = this.numberInput("#added-input");
    if (this.kind === "field_addition" && added !== null) spec.added_count = added;
    const override = this.numberInput("#status-input");
    if (override !== null) spec.status_override = override;
    const seed = this.numberInput("#seed-input");
    if (seed !== null) spec.seed = seed;
    return spec;
  }

  private numberInput(selector: string): number | null {
    const input = this.root.querySelector<HTMLInputElement>(selector);
    if (input === null || input.value.trim() === "") return null;
    const value = Number(input.value);
    return Number.isFinite(value) ? value : null;
  }

  render(): void {
    const store = this.app.store;
    const path = store.selectedPath;
    const rule = path === null ? undefined : store.ruleForPath(path);
    const saved = this.controlValues();

    const options = store
      .knownPaths()
      .map(
        (p) =>
          `<option value="${escapeHtml(p)}"${p === path ? " selected" : ""}>${escapeHtml(p)}</option>`,
      )
      .join("");

    const kindButtons = KIND_ORDER.map((kind) => {
      const active = kind === this.kind ? " active" : "";
      return (
        `<button class="kind${active}" data-action="pick-kind" data-kind="${kind}">` +
        `${KIND_TITLES[kind]}</button>`
      );
    }).join("");

    this.root.innerHTML =
      "<h2>Mutation Console</h2>" +
      '<div class="row">' +
      `<select id="endpoint-pick"><option value="">endpoint...</option>${options}</select>` +
      `<input id="endpoint-input" placeholder="/api/path" value="${escapeHtml(saved.endpoint ?? path ?? "")}">` +
      '<button data-action="use-endpoint">Use</button>' +
      "</div>" +
      `<p class="rule-state">${this.ruleStateLine(rule)}</p>` +
      '<div class="row"><button data-action="capture" class="primary">Capture next as baseline</button></div>' +
      `<div class="kinds">${kindButtons}</div>` +
      this.paramControls(rule, saved) +
      '<div class="row">' +
      '<button data-action="activate" class="primary">Activate</button>' +
      '<button data-action="clear">Pass through</button>' +
      "</div>" +
      (this.status !== "" ? `<p class="status">${escapeHtml(this.status)}</p>` : "");
  }

  private controlValues(): Record<string, string | undefined> {
    const read = (sel: string) => this.root.querySelector<HTMLInputElement>(sel)?.value;
    return {
      endpoint: read("#endpoint-input"),
      level: read("#level-input"),
      added: read("#added-input"),
      status: read("#status-input"),
      seed: read("#seed-input"),
    };
  }

  private ruleStateLine(rule: Rule | undefined): string {
    if (rule === undefined) return "no rule for this endpoint yet";
    const base =
      rule.baseline === null
        ? "no baseline"
        : `baseline ${rule.baseline.status} ${rule.baseline.format} (${rule.baseline.body_bytes} bytes, flow #${rule.baseline.exchange_id})`;
    const mutation = rule.mutation === null ? "" : `, ${describeSpec(rule.mutation)}`;
    return escapeHtml(`rule ${rule.id}: ${rule.mode}${mutation}, ${base}`);
  }

  private paramControls(rule: Rule | undefined, saved: Record<string, string | undefined>): string {
    const targets = rule !== undefined ? (this.app.targetsByRule.get(rule.id) ?? []) : [];
    const wantsTargets = this.kind === "field_removal" || this.kind === "type_change";
    const targetOptions = targets
      .map((t) => `<option value="${escapeHtml(t)}">${escapeHtml(t)}</option>`)
      .join("");
    const pickerRow = wantsTargets
      ? '<label>targets (optional)<select id="target-pick" multiple size="5">' +
        targetOptions +
        "</select></label>" +
        (targets.length === 0 ? '<p class="hint">capture a baseline to list target paths</p>' : "")
      : "";
    const levelRow =
      this.kind === "field_removal"
        ? `<label>escalation level<input id="level-input" type="number" min="1" step="1" value="${escapeHtml(saved.level ?? "1")}"></label>`
        : "";
    const addedRow =
      this.kind === "field_addition"
        ? `<label>fields to add<input id="added-input" type="number" min="1" step="1" value="${escapeHtml(saved.added ?? "1")}"></label>`
        : "";
    return (
      '<div class="params">' +
      pickerRow +
      levelRow +
      addedRow +
      `<label>status override<input id="status-input" type="number" min="100" max="599" value="${escapeHtml(saved.status ?? "")}" placeholder="keep"></label>` +
      `<label>seed<input id="seed-input" type="number" value="${escapeHtml(saved.seed ?? "")}" placeholder="random"></label>` +
      "</div>"
    );
  }
}
