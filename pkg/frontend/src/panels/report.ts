import type { App } from "../controller";
import { describeSpec, escapeHtml } from "../format";
import {
  BEHAVIOR_TITLES,
  CACHING_TITLES,
  KIND_ORDER,
  KIND_TITLES,
  SCHEME_TITLES,
  SEVERITY_ORDER,
  type CachingVerdict,
  type ReportData,
  type VersioningScheme,
} from "../types";

/** Live fragility report: behavior tallies worst-first, then per-target findings. */
export class ReportView {
  constructor(
    private readonly root: HTMLElement,
    private readonly app: App,
  ) {
    root.addEventListener("click", (event) => {
      const el = event.target as HTMLElement;
      if (el.closest("[data-action='refresh-report']") !== null) {
        void this.app.refreshReport().catch(() => {
          // a session with inconsistent observations cannot aggregate; keep the old view
        });
      }
    });
  }

  render(): void {
    const report = this.app.store.report;
    const body = report === null ? '<p class="hint">No report yet.</p>' : this.renderReport(report);
    this.root.innerHTML =
      '<h2>Fragility Report <button data-action="refresh-report">Refresh</button></h2>' + body;
  }

  private renderReport(report: ReportData): string {
    const sections = SEVERITY_ORDER.map((behavior) => {
      const rows = KIND_ORDER.map((kind) => {
        const count = report.totals[kind]?.[behavior] ?? 0;
        return `<tr><td>${KIND_TITLES[kind]}</td><td class="num">${count}</td></tr>`;
      }).join("");
      return (
        `<h3>${BEHAVIOR_TITLES[behavior]}</h3>` +
        `<table class="tally"><thead><tr><th>Mutation</th><th>Targets</th></tr></thead>` +
        `<tbody>${rows}</tbody></table>`
      );
    }).join("");

    const caching = this.countTable(
      "Caching",
      "Verdict",
      Object.entries(CACHING_TITLES).map(([key, title]) => [
        title,
        report.caching_counts[key as CachingVerdict] ?? 0,
      ]),
    );
    const versioning = this.countTable(
      "Versioning",
      "Scheme",
      Object.entries(SCHEME_TITLES).map(([key, title]) => [
        title,
        report.versioning_counts[key as VersioningScheme] ?? 0,
      ]),
    );

    const targets = report.per_target
      .map((target) => {
        const findings = target.findings
          .map(
            (f) =>
              `<tr><td>${escapeHtml(describeSpec(f.mutation))}</td>` +
              `<td>${BEHAVIOR_TITLES[f.behavior]}</td>` +
              `<td>${escapeHtml(f.note)}</td></tr>`,
          )
          .join("");
        const profile = target.profile;
        const version =
          profile.versioning.token === ""
            ? SCHEME_TITLES[profile.versioning.scheme]
            : `${SCHEME_TITLES[profile.versioning.scheme]} "${escapeHtml(profile.versioning.token)}"`;
        return (
          `<h3 class="target-name">${escapeHtml(target.target_name)}</h3>` +
          `<p class="profile">Caching: ${CACHING_TITLES[profile.caching]}` +
          `${profile.caching_suspected ? " (suspected)" : ""} | Versioning: ${version}</p>` +
          `<table class="findings"><thead><tr><th>Mutation</th><th>Behavior</th><th>Note</th></tr></thead>` +
          `<tbody>${findings}</tbody></table>`
        );
      })
      .join("");

    return (
      `<p>Targets under test: <strong>${report.target_count}</strong></p>` +
      sections +
      caching +
      versioning +
      (targets !== "" ? `<h3>Per Target</h3>${targets}` : "")
    );
  }

  private countTable(heading: string, label: string, rows: [string, number][]): string {
    const body = rows
      .map(([title, count]) => `<tr><td>${title}</td><td class="num">${count}</td></tr>`)
      .join("");
    return (
      `<h3>${heading}</h3>` +
      `<table class="tally"><thead><tr><th>${label}</th><th>Targets</th></tr></thead>` +
      `<tbody>${body}</tbody></table>`
    );
  }
}
