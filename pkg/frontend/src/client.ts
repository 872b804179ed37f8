// Session API client: SSE subscription with gap-triggered resync, and the
// control channel. Transport factories are injectable so the logic is
// testable without a browser.

import { DashboardStore } from "./store.js";
import type { ControlCommand, ControlResponse, EventEnvelope, StateSnapshot } from "./types.js";

export interface EventSourceLike {
  onmessage: ((ev: { data: string }) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  onopen: ((ev: unknown) => void) | null;
  close(): void;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ status: number; json(): Promise<unknown> }>;

const defaultEventSourceFactory: EventSourceFactory = (url) =>
  new EventSource(url) as unknown as EventSourceLike;

export class SessionClient {
  readonly store: DashboardStore;
  private source: EventSourceLike | null = null;
  private resyncInFlight = false;
  onChange: (() => void) | null = null;

  constructor(
    private baseUrl: string,
    store?: DashboardStore,
    private makeEventSource: EventSourceFactory = defaultEventSourceFactory,
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {
    this.store = store ?? new DashboardStore();
  }

  private changed(): void {
    if (this.onChange) this.onChange();
  }

  async start(): Promise<void> {
    await this.resync();
    this.subscribe();
  }

  subscribe(): void {
    const since = this.store.lastEventId;
    this.source = this.makeEventSource(`${this.baseUrl}/events?since=${since}`);
    this.source.onopen = () => {
      this.store.setConnection("live");
      this.changed();
    };
    this.source.onmessage = (ev) => {
      let envelope: EventEnvelope;
      try {
        envelope = JSON.parse(ev.data) as EventEnvelope;
      } catch {
        return; // a malformed frame must not kill the stream
      }
      this.store.setConnection("live");
      this.store.applyEvent(envelope);
      if (this.store.needsResync) {
        void this.resync();
      }
      this.changed();
    };
    this.source.onerror = () => {
      // EventSource reconnects on its own; show the gap honestly meanwhile
      this.store.setConnection("offline");
      this.changed();
    };
  }

  async resync(): Promise<void> {
    if (this.resyncInFlight) return;
    this.resyncInFlight = true;
    try {
      const resp = await this.fetchImpl(`${this.baseUrl}/state`);
      if (resp.status === 200) {
        this.store.applySnapshot((await resp.json()) as StateSnapshot);
        this.store.setConnection("live");
      } else {
        this.store.setConnection("offline");
      }
    } catch {
      this.store.setConnection("offline");
    } finally {
      this.resyncInFlight = false;
      this.changed();
    }
  }

  async sendControl(cmd: ControlCommand): Promise<boolean> {
    // never applied optimistically: the UI reflects the server's answer only
    try {
      const resp = await this.fetchImpl(`${this.baseUrl}/control`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(cmd),
      });
      const body = (await resp.json()) as ControlResponse;
      this.store.applyControlResponse(resp.status, body);
      this.changed();
      return resp.status === 200;
    } catch {
      this.store.lastError = "control request failed: session unreachable";
      this.store.setConnection("offline");
      this.changed();
      return false;
    }
  }

  async acknowledgeGuidance(eventId: number): Promise<boolean> {
    const ok = await this.sendControl({ cmd: "ack_guidance", event_id: eventId });
    if (ok) this.store.acknowledgePopup(eventId);
    this.changed();
    return ok;
  }

  reportUrl(): string {
    return `${this.baseUrl}/report`;
  }

  close(): void {
    if (this.source) this.source.close();
    this.source = null;
  }
}
