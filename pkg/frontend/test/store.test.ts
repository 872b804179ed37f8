// Fixture-driven store tests: the fixtures are event streams recorded from
// the engine running the bundled 21-stage plan (seed-1 scenarios).

import { readFileSync } from "node:fs";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import { DashboardStore } from "../src/store.js";
import type { EventEnvelope, StateSnapshot } from "../src/types.js";

const here = dirname(fileURLToPath(import.meta.url));

interface Fixture {
  scenario: string;
  stages_total: number;
  events: EventEnvelope[];
  report: { totals: { error_count: number } };
}

function loadFixture(name: string): Fixture {
  return JSON.parse(readFileSync(join(here, "fixtures", name), "utf-8")) as Fixture;
}

function playThrough(fixture: Fixture): DashboardStore {
  const store = new DashboardStore(fixture.stages_total);
  for (const envelope of fixture.events) store.applyEvent(envelope);
  return store;
}

describe("happy scenario stream", () => {
  const fixture = loadFixture("happy_events.json");

  it("ends with the stage panel at 21/21 and no pop-ups", () => {
    const store = playThrough(fixture);
    expect(store.stagesTotal).toBe(21);
    expect(store.doneCount()).toBe(21);
    for (let ordinal = 1; ordinal <= 21; ordinal++) {
      expect(store.stageMark(ordinal)).toBe("done");
    }
    expect(store.complete).toBe(true);
    expect(store.popupsShown.length).toBe(0);
    expect(store.activePopup).toBeNull();
  });

  it("keeps the displayed ordinal equal to the last server event", () => {
    const store = new DashboardStore(fixture.stages_total);
    let lastOrdinal = 0;
    for (const envelope of fixture.events) {
      store.applyEvent(envelope);
      if (envelope.event.type === "StageEntered") lastOrdinal = envelope.event.ordinal;
      expect(store.stageOrdinal).toBe(lastOrdinal);
    }
  });

  it("is idempotent under duplicate delivery", () => {
    const store = new DashboardStore(fixture.stages_total);
    for (const envelope of fixture.events) {
      store.applyEvent(envelope);
      store.applyEvent(envelope); // duplicate ids are dropped
    }
    expect(store.scrollback.length).toBe(fixture.events.length);
    expect(store.doneCount()).toBe(21);
  });
});

describe("cheat scenario stream", () => {
  const fixture = loadFixture("cheat_events.json");

  it("renders every ErrorDetected exactly once as a pop-up", () => {
    const store = playThrough(fixture);
    const errorEvents = fixture.events.filter((e) => e.event.type === "ErrorDetected");
    expect(errorEvents.length).toBeGreaterThanOrEqual(1);
    const errorPopups = store.popupsShown.filter((p) => p.errorKind !== null);
    expect(errorPopups.length).toBe(errorEvents.length);
    const ids = errorPopups.map((p) => p.eventId);
    expect(new Set(ids).size).toBe(ids.length);
    expect(errorPopups[0].errorKind).toBe("ScrewNotTightened");
    expect(errorPopups[0].textKey).toBe("guidance.retighten");
  });

  it("still completes after the correction", () => {
    const store = playThrough(fixture);
    expect(store.complete).toBe(true);
    expect(store.doneCount()).toBe(21);
  });

  it("acknowledging the pop-up closes it", () => {
    const store = playThrough(fixture);
    // re-emitted guidance shares content but not ids; the active pop-up is the newest
    const popup = store.activePopup;
    if (popup) {
      store.acknowledgePopup(popup.eventId);
      expect(store.activePopup).toBeNull();
    }
  });

  it("newer guidance supersedes the active pop-up", () => {
    const store = new DashboardStore(fixture.stages_total);
    const guidance = fixture.events.filter((e) => e.event.type === "Guidance");
    for (const envelope of fixture.events) {
      store.applyEvent(envelope);
    }
    if (guidance.length > 1) {
      expect(store.popupsShown.length).toBe(guidance.length);
    }
  });
});

describe("snapshots and control responses", () => {
  const snapshot: StateSnapshot = {
    session_id: "s",
    plan_id: "p",
    stage_ordinal: 5,
    stages_total: 21,
    phase: "PartAssembly",
    paused: false,
    complete: false,
    outcome: "InProgress",
    holes: { E1: "assembled", E2: "empty" },
    last_guidance: null,
    last_event_id: 12,
  };

  it("resync adopts server state and clears the resync flag", () => {
    const store = new DashboardStore(0);
    store.needsResync = true;
    store.applySnapshot(snapshot);
    expect(store.stageOrdinal).toBe(5);
    expect(store.stagesTotal).toBe(21);
    expect(store.doneCount()).toBe(4); // prefix of the current stage
    expect(store.lastEventId).toBe(12);
    expect(store.needsResync).toBe(false);
    expect(store.holes.E1).toBe("assembled");
  });

  it("gap detection marks the store for resync", () => {
    const store = new DashboardStore(21);
    store.applyEvent({ event_id: 1, t_ms: 0, event: { type: "StageEntered", ordinal: 1 } });
    expect(store.needsResync).toBe(false);
    store.applyEvent({ event_id: 5, t_ms: 99, event: { type: "StageEntered", ordinal: 2 } });
    expect(store.needsResync).toBe(true);
  });

  it("pause reflects only after a server acknowledgment", () => {
    const store = new DashboardStore(21);
    expect(store.paused).toBe(false);
    // a rejected command changes nothing but surfaces the error
    store.applyControlResponse(409, { error: "nope" });
    expect(store.paused).toBe(false);
    expect(store.lastError).toBe("nope");
    // the accepted command carries the applied snapshot
    store.applyControlResponse(200, { applied: { ...snapshot, paused: true } });
    expect(store.paused).toBe(true);
    expect(store.lastError).toBeNull();
  });
});
