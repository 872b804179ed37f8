// Dashboard state: a reducer over session snapshots and event envelopes.
//
// Invariants the rest of the UI relies on:
//  - the displayed stage ordinal always comes from the server (snapshot or
//    event), never from client-side inference;
//  - each ErrorDetected is surfaced as exactly one pop-up (keyed by the
//    guidance envelope id) until acknowledged or superseded by newer guidance
//    for the same stage;
//  - paused flips only from a server-acknowledged control response or
//    snapshot, never optimistically.

import type {
  ControlResponse,
  EventEnvelope,
  GuidanceEvent,
  StageMark,
  StateSnapshot,
} from "./types.js";

export interface Popup {
  eventId: number;
  stage: number;
  textKey: string;
  parameters: Record<string, unknown>;
  errorKind: string | null;
}

export type Connection = "connecting" | "live" | "offline";

export class DashboardStore {
  connection: Connection = "connecting";
  stagesTotal = 0;
  stageOrdinal = 0;
  phase = "";
  paused = false;
  complete = false;
  holes: Record<string, string> = {};
  lastEventId = 0;
  needsResync = false;
  scrollback: EventEnvelope[] = [];
  activePopup: Popup | null = null;
  popupsShown: Popup[] = [];
  lastError: string | null = null;

  private stageDone = new Set<number>();
  private pendingErrorKind: string | null = null;

  constructor(stagesTotal = 0) {
    this.stagesTotal = stagesTotal;
  }

  stageMark(ordinal: number): StageMark {
    if (this.stageDone.has(ordinal)) return "done";
    if (ordinal === this.stageOrdinal && !this.complete) return "active";
    return "pending";
  }

  doneCount(): number {
    return this.stageDone.size;
  }

  applySnapshot(snap: StateSnapshot): void {
    this.stagesTotal = snap.stages_total;
    this.stageOrdinal = snap.stage_ordinal;
    this.phase = snap.phase;
    this.paused = snap.paused;
    this.complete = snap.complete;
    this.holes = snap.holes;
    // stages strictly before the current one are done by the engine's
    // no-skip contract; completion closes the last stage too
    for (let i = 1; i < snap.stage_ordinal; i++) this.stageDone.add(i);
    if (snap.complete) this.stageDone.add(snap.stage_ordinal);
    if (snap.last_guidance && this.activePopup === null) {
      this.showPopup(snap.last_guidance.event_id, snap.last_guidance);
    }
    this.lastEventId = Math.max(this.lastEventId, snap.last_event_id);
    this.needsResync = false;
  }

  applyEvent(envelope: EventEnvelope): void {
    if (envelope.event_id <= this.lastEventId) return; // duplicate delivery
    if (envelope.event_id > this.lastEventId + 1) this.needsResync = true;
    this.lastEventId = envelope.event_id;
    this.scrollback.push(envelope);

    const event = envelope.event;
    switch (event.type) {
      case "StageEntered":
        this.stageOrdinal = event.ordinal;
        break;
      case "StageCompleted":
        this.stageDone.add(event.ordinal);
        break;
      case "ErrorDetected":
        this.pendingErrorKind = event.kind;
        break;
      case "Guidance":
        this.showPopup(envelope.event_id, event);
        break;
      case "AssemblyComplete":
        this.complete = true;
        break;
      case "GuidanceAcknowledged":
        if (this.activePopup && this.activePopup.eventId === event.acked_event_id) {
          this.activePopup = null;
        }
        break;
    }
  }

  private showPopup(eventId: number, guidance: GuidanceEvent): void {
    const popup: Popup = {
      eventId,
      stage: guidance.stage,
      textKey: guidance.text_key,
      parameters: guidance.parameters,
      errorKind: this.pendingErrorKind,
    };
    this.pendingErrorKind = null;
    if (this.popupsShown.some((p) => p.eventId === eventId)) return; // never re-render
    // newer guidance for the same stage supersedes the older pop-up
    this.popupsShown.push(popup);
    this.activePopup = popup;
  }

  acknowledgePopup(eventId: number): void {
    if (this.activePopup && this.activePopup.eventId === eventId) {
      this.activePopup = null;
    }
  }

  applyControlResponse(status: number, body: ControlResponse): void {
    if (status === 200 && body.applied) {
      this.applySnapshot(body.applied);
      this.lastError = null;
    } else {
      this.lastError = body.error ?? `control failed (${status})`;
    }
  }

  setConnection(connection: Connection): void {
    this.connection = connection;
  }
}
