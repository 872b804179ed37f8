// Client transport logic against fake EventSource/fetch implementations.

import { describe, expect, it } from "vitest";

import { SessionClient, type EventSourceLike } from "../src/client.js";
import { DashboardStore } from "../src/store.js";
import type { EventEnvelope, StateSnapshot } from "../src/types.js";

class FakeEventSource implements EventSourceLike {
  onmessage: ((ev: { data: string }) => void) | null = null;
  onerror: ((ev: unknown) => void) | null = null;
  onopen: ((ev: unknown) => void) | null = null;
  closed = false;

  constructor(public url: string) {}

  emit(envelope: EventEnvelope): void {
    this.onmessage?.({ data: JSON.stringify(envelope) });
  }

  fail(): void {
    this.onerror?.(new Error("stream broken"));
  }

  close(): void {
    this.closed = true;
  }
}

function snapshot(overrides: Partial<StateSnapshot> = {}): StateSnapshot {
  return {
    session_id: "s",
    plan_id: "p",
    stage_ordinal: 3,
    stages_total: 21,
    phase: "PartAssembly",
    paused: false,
    complete: false,
    outcome: "InProgress",
    holes: {},
    last_guidance: null,
    last_event_id: 7,
    ...overrides,
  };
}

interface Call {
  url: string;
  init?: { method?: string; body?: string };
}

function makeClient(responses: Array<{ status: number; body: unknown }>) {
  const calls: Call[] = [];
  const sources: FakeEventSource[] = [];
  const client = new SessionClient(
    "http://x",
    new DashboardStore(),
    (url) => {
      const src = new FakeEventSource(url);
      sources.push(src);
      return src;
    },
    async (url, init) => {
      calls.push({ url, init });
      const next = responses.shift() ?? { status: 500, body: {} };
      return { status: next.status, json: async () => next.body };
    },
  );
  return { client, calls, sources };
}

function envelope(id: number, event: EventEnvelope["event"]): EventEnvelope {
  return { event_id: id, t_ms: id * 33, event };
}

describe("SessionClient", () => {
  it("start fetches a snapshot then subscribes from the snapshot id", async () => {
    const { client, calls, sources } = makeClient([
      { status: 200, body: snapshot({ last_event_id: 7 }) },
    ]);
    await client.start();
    expect(calls[0].url).toBe("http://x/state");
    expect(client.store.stageOrdinal).toBe(3);
    expect(sources[0].url).toBe("http://x/events?since=7");
  });

  it("an event-id gap triggers exactly one resync and no duplicate rows", async () => {
    const { client, calls, sources } = makeClient([
      { status: 200, body: snapshot({ last_event_id: 0, stage_ordinal: 1 }) },
      { status: 200, body: snapshot({ last_event_id: 4, stage_ordinal: 2 }) },
    ]);
    await client.start();
    const src = sources[0];
    src.emit(envelope(1, { type: "StageEntered", ordinal: 1 }));
    expect(client.store.needsResync).toBe(false);
    src.emit(envelope(4, { type: "StageEntered", ordinal: 2 }));
    await new Promise((resolve) => setTimeout(resolve, 0)); // let the resync settle
    expect(calls.filter((c) => c.url.endsWith("/state")).length).toBe(2);
    expect(client.store.needsResync).toBe(false);
    expect(client.store.stageOrdinal).toBe(2);
    // both received rows kept once each, nothing duplicated
    const ids = client.store.scrollback.map((e) => e.event_id);
    expect(ids).toEqual([1, 4]);
  });

  it("stream errors show the offline banner, recovery clears it", async () => {
    const { client, sources } = makeClient([
      { status: 200, body: snapshot({ last_event_id: 0 }) },
    ]);
    await client.start();
    expect(client.store.connection).toBe("live");
    sources[0].fail();
    expect(client.store.connection).toBe("offline");
    sources[0].emit(envelope(1, { type: "StageEntered", ordinal: 1 }));
    expect(client.store.connection).toBe("live");
  });

  it("pause is not applied optimistically", async () => {
    const { client } = makeClient([
      { status: 200, body: snapshot({ last_event_id: 0 }) },
      { status: 200, body: { applied: snapshot({ paused: true }) } },
    ]);
    await client.start();
    expect(client.store.paused).toBe(false);
    const promise = client.sendControl({ cmd: "pause" });
    expect(client.store.paused).toBe(false); // nothing until the server answers
    await promise;
    expect(client.store.paused).toBe(true);
  });

  it("a 409 surfaces as a visible error without state change", async () => {
    const { client } = makeClient([
      { status: 200, body: snapshot({ last_event_id: 0 }) },
      { status: 409, body: { error: "unknown command" } },
    ]);
    await client.start();
    const ok = await client.sendControl({ cmd: "pause" });
    expect(ok).toBe(false);
    expect(client.store.paused).toBe(false);
    expect(client.store.lastError).toBe("unknown command");
  });

  it("control during disconnect is rejected visibly, never dropped", async () => {
    const failingFetch = async () => {
      throw new Error("connection refused");
    };
    const client = new SessionClient(
      "http://x",
      new DashboardStore(),
      (url) => new FakeEventSource(url),
      failingFetch as never,
    );
    const ok = await client.sendControl({ cmd: "pause" });
    expect(ok).toBe(false);
    expect(client.store.lastError).toContain("unreachable");
    expect(client.store.connection).toBe("offline");
  });

  it("acknowledging guidance closes the pop-up after the server accepts", async () => {
    const { client, sources } = makeClient([
      { status: 200, body: snapshot({ last_event_id: 0 }) },
      { status: 200, body: { applied: snapshot() } },
    ]);
    await client.start();
    sources[0].emit(envelope(1, { type: "ErrorDetected", kind: "WrongPart", detail: {} }));
    sources[0].emit(envelope(2, {
      type: "Guidance", text_key: "guidance.wrong_part", stage: 1, parameters: {},
    }));
    expect(client.store.activePopup?.eventId).toBe(2);
    await client.acknowledgeGuidance(2);
    expect(client.store.activePopup).toBeNull();
  });
});
