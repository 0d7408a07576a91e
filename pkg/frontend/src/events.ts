import type { ControlClient } from "./api";
import type { StreamEvent } from "./types";

/**
 * Reader for the control API's NDJSON event feed.
 *
 * The feed needs a bearer header, which rules out EventSource, so this
 * consumes a streaming fetch body instead. Delivery is at-least-once per
 * connection with monotone ids; the reader dedups on id so reconnects can
 * safely replay. Each connection is one-way and server-closed on shutdown.
 */
export class EventStream {
  private lastId = 0;
  private stopped = false;
  private controller: AbortController | null = null;

  constructor(
    private readonly client: ControlClient,
    private readonly onEvent: (event: StreamEvent) => void,
    private readonly onStatus: (connected: boolean) => void = () => {},
    private readonly fetchImpl: typeof fetch = fetch,
    private readonly retryDelayMs = 500,
  ) {}

  get cursor(): number {
    return this.lastId;
  }

  start(): void {
    this.stopped = false;
    void this.loop();
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
  }

  private async loop(): Promise<void> {
    while (!this.stopped) {
      try {
        await this.readOnce();
      } catch {
        // connection dropped or refused; fall through to retry
      }
      this.onStatus(false);
      if (this.stopped) return;
      await new Promise((r) => setTimeout(r, this.retryDelayMs));
    }
  }

  private async readOnce(): Promise<void> {
    this.controller = new AbortController();
    const resp = await this.fetchImpl(this.client.eventsUrl(this.lastId), {
      headers: this.client.authHeader(),
      signal: this.controller.signal,
    });
    if (!resp.ok || resp.body === null) {
      throw new Error(`event stream: ${resp.status}`);
    }
    this.onStatus(true);
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      let newline;
      while ((newline = buffer.indexOf("\n")) >= 0) {
        const line = buffer.slice(0, newline).trim();
        buffer = buffer.slice(newline + 1);
        if (line === "") continue;
        this.dispatch(line);
      }
    }
  }

  private dispatch(line: string): void {
    let event: StreamEvent;
    try {
      event = JSON.parse(line) as StreamEvent;
    } catch {
      return; // torn line mid-close, next connection replays it
    }
    if (event.record !== "event" || typeof event.id !== "number") return;
    if (event.id <= this.lastId) return; // replayed duplicate
    this.lastId = event.id;
    this.onEvent(event);
  }
}
