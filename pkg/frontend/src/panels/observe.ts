import type { App } from "../controller";
import { escapeHtml, fmtSeconds } from "../format";
import { pathOf } from "../store";
import {
  BEHAVIOR_ORDER,
  BEHAVIOR_TITLES,
  type Behavior,
  type Observation,
} from "../types";

/**
 * Observation form: one button per behavior category submits immediately,
 * bound to the newest mutated flow on the selected endpoint. The recorded
 * auto-signals come back on the response and are shown under the form.
 */
export class ObservationForm {
  private lastRecorded: Observation | null = null;
  private error = "";

  constructor(
    private readonly root: HTMLElement,
    private readonly app: App,
  ) {
    root.addEventListener("click", (event) => {
      const button = (event.target as HTMLElement).closest("button[data-behavior]");
      if (button !== null) {
        void this.submit(button.getAttribute("data-behavior") as Behavior);
      }
    });
  }

  private async submit(behavior: Behavior): Promise<void> {
    const note = this.root.querySelector<HTMLInputElement>("#obs-note")?.value ?? "";
    const aborted =
      this.root.querySelector<HTMLInputElement>("#obs-aborted")?.checked ?? false;
    try {
      this.lastRecorded = await this.app.submitObservation(behavior, note, aborted);
      this.error = "";
      await this.app.refreshReport();
    } catch (err) {
      this.error = err instanceof Error ? err.message : String(err);
    }
    this.app.store.notify();
  }

  render(): void {
    const store = this.app.store;
    const path = store.selectedPath;
    const flow = path === null ? undefined : store.latestMutatedFlow(path);
    const saved = this.root.querySelector<HTMLInputElement>("#obs-note")?.value;

    const binding =
      flow === undefined
        ? `<p class="hint">${
            path === null
              ? "Pick an endpoint to record behavior against."
              : `No mutated flow for ${escapeHtml(path)} yet. Activate a mutation and let the client fetch.`
          }</p>`
        : `<p class="binding">Recording against flow #${flow.id} ` +
          `(${escapeHtml(pathOf(flow.request.target))}, status ${flow.response.status})</p>`;

    const buttons = BEHAVIOR_ORDER.map(
      (b) => `<button data-behavior="${b}" class="behavior b-${b}">${BEHAVIOR_TITLES[b]}</button>`,
    ).join("");

    const recorded = this.lastRecorded;
    let outcome = "";
    if (this.error !== "") {
      outcome = `<p class="status error">${escapeHtml(this.error)}</p>`;
    } else if (recorded !== null) {
      const signals = recorded.auto_signals;
      const signalLine =
        signals === undefined
          ? ""
          : `<p class="signals">auto-signals: ${signals.retry_count} retries in window, ` +
            `next request ${fmtSeconds(signals.seconds_to_next_request)}` +
            `${signals.client_aborted ? ", client aborted" : ""}</p>`;
      outcome =
        `<p class="status">recorded ${BEHAVIOR_TITLES[recorded.behavior]} ` +
        `on flow #${recorded.exchange_id}</p>` +
        signalLine;
    }

    this.root.innerHTML =
      "<h2>Record Behavior</h2>" +
      binding +
      `<div class="behaviors">${buttons}</div>` +
      '<div class="row">' +
      `<input id="obs-note" placeholder="note (optional)" value="${escapeHtml(saved ?? "")}">` +
      '<label class="inline"><input id="obs-aborted" type="checkbox"> client aborted</label>' +
      "</div>" +
      outcome;
  }
}
