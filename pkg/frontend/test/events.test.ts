import { createServer, type Server } from "node:http";
import type { AddressInfo } from "node:net";
import { afterEach, describe, expect, it } from "vitest";
import { ControlClient } from "../src/api";
import { EventStream } from "../src/events";
import type { StreamEvent } from "../src/types";

// NDJSON stub standing in for the control API's /events endpoint. Each
// connection replays everything after ?since=, like the real feed, so the
// reader's id dedup is what keeps delivery exactly-once downstream.

function line(id: number, kind = "flow-recorded"): string {
  return JSON.stringify({ record: "event", id, kind, time: 1.5, data: { exchange_id: id } }) + "\n";
}

describe("EventStream", () => {
  let server: Server | null = null;
  let stream: EventStream | null = null;

  afterEach(async () => {
    stream?.stop();
    await new Promise<void>((resolve) => {
      if (server === null) return resolve();
      server.close(() => resolve());
      server.closeAllConnections();
    });
  });

  async function serve(handler: (since: number, n: number) => string): Promise<string> {
    let connections = 0;
    server = createServer((req, res) => {
      const url = new URL(req.url ?? "/", "http://x");
      if (!url.pathname.endsWith("/events")) {
        res.writeHead(404).end();
        return;
      }
      connections += 1;
      const since = Number(url.searchParams.get("since") ?? "0");
      res.writeHead(200, { "Content-Type": "application/x-ndjson", Connection: "close" });
      res.end(handler(since, connections));
    });
    await new Promise<void>((resolve) => server?.listen(0, "127.0.0.1", resolve));
    const port = (server.address() as AddressInfo).port;
    return `http://127.0.0.1:${port}`;
  }

  function collect(base: string): { got: StreamEvent[]; stream: EventStream } {
    const got: StreamEvent[] = [];
    const client = new ControlClient({ baseUrl: base, token: "t" });
    stream = new EventStream(client, (e) => got.push(e), () => {}, fetch, 20);
    return { got, stream };
  }

  async function until(check: () => boolean, ms = 3000): Promise<void> {
    const deadline = Date.now() + ms;
    while (!check()) {
      if (Date.now() > deadline) throw new Error("condition never held");
      await new Promise((r) => setTimeout(r, 10));
    }
  }

  it("delivers events once despite replay across reconnects", async () => {
    // first connection sends 1..3, every reconnect replays 1..5
    const base = await serve((_since, n) =>
      n === 1 ? line(1) + line(2) + line(3) : line(1) + line(2) + line(3) + line(4) + line(5),
    );
    const { got, stream: s } = collect(base);
    s.start();
    await until(() => got.length >= 5);
    expect(got.map((e) => e.id)).toEqual([1, 2, 3, 4, 5]);
    expect(s.cursor).toBe(5);
  });

  it("resumes from its cursor", async () => {
    const asked: number[] = [];
    const base = await serve((since) => {
      asked.push(since);
      return line(since + 1);
    });
    const { got, stream: s } = collect(base);
    s.start();
    await until(() => got.length >= 3);
    expect(asked.slice(0, 3)).toEqual([0, 1, 2]);
  });

  it("skips torn trailing lines and recovers them on reconnect", async () => {
    const base = await serve((since, n) => {
      if (n === 1) return line(1) + '{"record": "event", "id": 2, "kin'; // cut mid-record
      return since < 2 ? line(2) + line(3) : line(Math.max(since, 2) + 1);
    });
    const { got, stream: s } = collect(base);
    s.start();
    await until(() => got.length >= 3);
    expect(got.slice(0, 3).map((e) => e.id)).toEqual([1, 2, 3]);
  });

  it("reports connection status transitions", async () => {
    const base = await serve(() => line(1));
    const got: StreamEvent[] = [];
    const statuses: boolean[] = [];
    const client = new ControlClient({ baseUrl: base, token: "t" });
    stream = new EventStream(client, (e) => got.push(e), (up) => statuses.push(up), fetch, 20);
    stream.start();
    await until(() => statuses.includes(true) && statuses.includes(false));
    expect(statuses[0]).toBe(true); // connected before the first drop
  });

  it("stop() ends the loop", async () => {
    const base = await serve(() => line(1));
    const { got, stream: s } = collect(base);
    s.start();
    await until(() => got.length >= 1);
    s.stop();
    const seen = got.length;
    await new Promise((r) => setTimeout(r, 120));
    expect(got.length).toBe(seen);
  });
});
