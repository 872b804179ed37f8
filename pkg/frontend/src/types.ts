// Wire types for the session HTTP API.

export interface StateSnapshot {
  session_id: string;
  plan_id: string;
  stage_ordinal: number;
  stages_total: number;
  phase: string;
  paused: boolean;
  complete: boolean;
  outcome: "InProgress" | "Complete" | "Aborted";
  holes: Record<string, string>;
  last_guidance: GuidanceEvent & { event_id: number } | null;
  last_event_id: number;
}

export interface StageEnteredEvent {
  type: "StageEntered";
  ordinal: number;
}

export interface StageCompletedEvent {
  type: "StageCompleted";
  ordinal: number;
  duration_ms: number;
}

export interface ErrorDetectedEvent {
  type: "ErrorDetected";
  kind: string;
  detail: Record<string, unknown>;
}

export interface GuidanceEvent {
  type: "Guidance";
  text_key: string;
  stage: number;
  parameters: Record<string, unknown>;
}

export interface AssemblyCompleteEvent {
  type: "AssemblyComplete";
  total_ms: number;
}

export interface GuidanceAcknowledgedEvent {
  type: "GuidanceAcknowledged";
  acked_event_id: number;
}

export type VerifierEvent =
  | StageEnteredEvent
  | StageCompletedEvent
  | ErrorDetectedEvent
  | GuidanceEvent
  | AssemblyCompleteEvent
  | GuidanceAcknowledgedEvent;

export interface EventEnvelope {
  event_id: number;
  t_ms: number;
  event: VerifierEvent;
}

export type ControlCommand =
  | { cmd: "pause" }
  | { cmd: "resume" }
  | { cmd: "abort" }
  | { cmd: "ack_guidance"; event_id: number };

export interface ControlResponse {
  applied?: StateSnapshot;
  error?: string;
}

export type StageMark = "pending" | "active" | "done";
