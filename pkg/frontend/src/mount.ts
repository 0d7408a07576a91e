import type { ClientConfig } from "./api";
import { App } from "./controller";
import { escapeHtml, fmtClock } from "./format";
import { FlowPanel } from "./panels/flows";
import { MutationConsole } from "./panels/console";
import { ObservationForm } from "./panels/observe";
import { ReportView } from "./panels/report";

export interface PanelMounts {
  flows: HTMLElement;
  console: HTMLElement;
  observe: HTMLElement;
  report: HTMLElement;
  notices: HTMLElement;
  status?: HTMLElement;
}

export interface Dashboard {
  app: App;
  renderAll: () => void;
  stop: () => void;
}

/**
 * Wire the four panels plus the notice strip onto existing containers.
 * Browser boot and the scripted tests share this entry so both drive the
 * same wiring.
 */
export function mountDashboard(mounts: PanelMounts, config: ClientConfig): Dashboard {
  const app = new App(config);
  const flows = new FlowPanel(mounts.flows, app);
  const consolePanel = new MutationConsole(mounts.console, app);
  const observe = new ObservationForm(mounts.observe, app);
  const report = new ReportView(mounts.report, app);

  const renderAll = () => {
    flows.render();
    consolePanel.render();
    observe.render();
    report.render();
    renderNotices(mounts.notices, app);
    if (mounts.status !== undefined) {
      mounts.status.className = app.store.connected ? "dot on" : "dot off";
      mounts.status.title = app.store.connected ? "event stream connected" : "disconnected";
    }
  };

  const unsubscribe = app.store.subscribe(renderAll);
  renderAll();

  return {
    app,
    renderAll,
    stop: () => {
      unsubscribe();
      app.stop();
    },
  };
}

function renderNotices(root: HTMLElement, app: App): void {
  const items = app.store.notices
    .slice(-8)
    .reverse()
    .map(
      (n) =>
        `<li class="n-${escapeHtml(n.kind)}">` +
        `<span class="t">${fmtClock(n.time)}</span> ${escapeHtml(n.text)}</li>`,
    )
    .join("");
  root.innerHTML = items === "" ? "" : `<ul class="notices">${items}</ul>`;
}
