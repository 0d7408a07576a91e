import type { App } from "../controller";
import { decodeBase64, diffBytes, printableBytes } from "../diff";
import { escapeHtml, fmtClock, fmtSize, sniffFormat } from "../format";
import { pathOf } from "../store";
import type { Flow } from "../types";

const CONTEXT_BYTES = 64;
const ROW_LIMIT = 200;

/**
 * Live list of intercepted exchanges plus a detail drawer for the selected
 * one. Mutated flows get their response diffed byte-wise against the
 * rule's baseline body, with the changed span highlighted.
 */
export class FlowPanel {
  constructor(
    private readonly root: HTMLElement,
    private readonly app: App,
  ) {
    root.addEventListener("click", (event) => {
      const row = (event.target as HTMLElement).closest("tr[data-flow-id]");
      if (row !== null) {
        const id = Number(row.getAttribute("data-flow-id"));
        this.app.selectFlow(this.app.store.selectedFlowId === id ? null : id);
      }
    });
  }

  render(): void {
    const store = this.app.store;
    const newestFirst = store.flows.slice(-ROW_LIMIT).reverse();

    const rows = newestFirst
      .map((flow) => {
        const selected = flow.id === store.selectedFlowId ? " selected" : "";
        const badge =
          flow.origin === "mutated_local"
            ? '<span class="badge badge-mut">MutatedLocal</span>'
            : '<span class="badge badge-up">Upstream</span>';
        const size = decodeBase64(flow.response.body).length;
        return (
          `<tr data-flow-id="${flow.id}" class="flow-row${selected}">` +
          `<td>${flow.id}</td>` +
          `<td>${fmtClock(flow.wall_time)}</td>` +
          `<td>${escapeHtml(flow.request.method)}</td>` +
          `<td class="target">${escapeHtml(pathOf(flow.request.target))}</td>` +
          `<td>${badge}</td>` +
          `<td>${sniffFormat(flow.response.headers)}</td>` +
          `<td>${flow.response.status}</td>` +
          `<td class="num">${fmtSize(size)}</td>` +
          "</tr>"
        );
      })
      .join("");

    const table =
      '<table class="flow-table"><thead><tr>' +
      "<th>#</th><th>time</th><th>method</th><th>path</th><th>origin</th><th>format</th><th>status</th><th>size</th>" +
      `</tr></thead><tbody>${rows}</tbody></table>`;

    const empty =
      store.flows.length === 0
        ? '<p class="hint">No flows yet. Point a client at the proxy port.</p>'
        : "";

    const selectedFlow =
      store.selectedFlowId === null ? undefined : store.flowById(store.selectedFlowId);
    const detail = selectedFlow === undefined ? "" : this.renderDetail(selectedFlow);

    this.root.innerHTML =
      `<h2>Flows <span class="count">${store.flows.length}</span></h2>` +
      `<div class="flow-scroll">${table}${empty}</div>` +
      detail;
  }

  private renderDetail(flow: Flow): string {
    const req = flow.request;
    const res = flow.response;
    const reqHeaders = req.headers.map(([n, v]) => `${n}: ${v}`).join("\n");
    const resHeaders = res.headers.map(([n, v]) => `${n}: ${v}`).join("\n");
    const reqBody = decodeBase64(req.body);
    const resBody = decodeBase64(res.body);

    let bodyBlock: string;
    const baseline = this.app.store.baselineFor(flow);
    if (flow.origin === "mutated_local" && baseline !== undefined) {
      bodyBlock = this.renderDiff(decodeBase64(baseline.response.body), resBody, baseline.id);
    } else {
      bodyBlock = `<pre class="body">${escapeHtml(printableBytes(resBody))}</pre>`;
    }

    const reqBodyBlock =
      reqBody.length > 0
        ? `<pre class="body">${escapeHtml(printableBytes(reqBody))}</pre>`
        : "";

    return (
      `<div class="flow-detail">` +
      `<h3>Flow #${flow.id}</h3>` +
      `<pre class="reqline">${escapeHtml(req.method)} ${escapeHtml(req.target)}</pre>` +
      `<pre class="headers">${escapeHtml(reqHeaders)}</pre>` +
      reqBodyBlock +
      `<pre class="reqline">${res.status} ${escapeHtml(res.reason)}</pre>` +
      `<pre class="headers">${escapeHtml(resHeaders)}</pre>` +
      bodyBlock +
      `</div>`
    );
  }

  private renderDiff(before: Uint8Array, after: Uint8Array, baselineId: number): string {
    const diff = diffBytes(before, after);
    if (diff.identical) {
      return (
        `<p class="hint">Response is byte-identical to baseline flow #${baselineId}.</p>` +
        `<pre class="body">${escapeHtml(printableBytes(after))}</pre>`
      );
    }
    const ctxHead = diff.prefix.subarray(Math.max(0, diff.prefix.length - CONTEXT_BYTES));
    const ctxTail = diff.suffix.subarray(0, CONTEXT_BYTES);
    const skippedHead = diff.prefix.length - ctxHead.length;
    const skippedTail = diff.suffix.length - ctxTail.length;

    const pieces: string[] = [];
    if (skippedHead > 0) pieces.push(`<span class="skip">[${skippedHead} bytes]</span>`);
    pieces.push(`<span class="ctx">${escapeHtml(printableBytes(ctxHead))}</span>`);
    if (diff.removed.length > 0) {
      pieces.push(`<del>${escapeHtml(printableBytes(diff.removed))}</del>`);
    }
    if (diff.added.length > 0) {
      pieces.push(`<ins>${escapeHtml(printableBytes(diff.added))}</ins>`);
    }
    pieces.push(`<span class="ctx">${escapeHtml(printableBytes(ctxTail))}</span>`);
    if (skippedTail > 0) pieces.push(`<span class="skip">[${skippedTail} bytes]</span>`);

    return (
      `<p class="hint">Diff against baseline flow #${baselineId}: ` +
      `<del>${diff.removed.length} bytes out</del> <ins>${diff.added.length} bytes in</ins></p>` +
      `<pre class="body diff">${pieces.join("")}</pre>`
    );
  }
}
