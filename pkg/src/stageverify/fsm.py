"""The stage-verification state machine.

`step` is a pure transition function: it consumes one fused observation per
tick, advances through the plan's stages, enters correction phases on errors
or null actions, and emits events. Every ErrorDetected is immediately followed
by a Guidance event in the same step. Stage ordinals never decrease and grow
by at most one per step, so replays are monotone and skip-free by construction.

Debouncing is consecutive-tick holding (`hold_ticks`): a condition must stay
true across a full run of ticks before it moves the machine, which keeps
single-frame flicker from causing transitions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping, Union

from .model import (
    ActionConfidence,
    DetectionFrame,
    GRASP_CLASS,
    ObjAngle,
    PartClass,
    ThresholdConfig,
    circ_diff,
)
from .plan import AssemblyPlan, StageKind, StageSpec
from .screwlink import HoleState, HoleStatus, UNKNOWN_STATUS

STATE_SCHEMA_VERSION = 1
HAND_REGION_SIDE = 0.25  # normalized box around the active wrist


class InconsistentState(RuntimeError):
    """Verifier state references a stage the plan does not have."""


class Phase(str, Enum):
    PART_ASSEMBLY = "PartAssembly"
    PART_ASSEMBLY_CORRECTION = "PartAssemblyCorrection"
    PART_VERIFICATION = "PartVerification"
    SCREW_ASSEMBLY = "ScrewAssembly"
    SCREW_ASSEMBLY_CORRECTION = "ScrewAssemblyCorrection"
    STAGE_COMPLETE = "StageComplete"
    FINAL = "Final"


class ErrorKind(str, Enum):
    WRONG_PART = "WrongPart"
    WRONG_PLACEMENT = "WrongPlacement"
    WRONG_ANGLE = "WrongAngle"
    SCREW_NOT_TIGHTENED = "ScrewNotTightened"
    NULL_ACTION = "NullAction"
    CAMERA_OFFLINE = "CameraOffline"


# --- events ----------------------------------------------------------------------

@dataclass(frozen=True)
class StageEntered:
    ordinal: int

    def to_dict(self) -> dict[str, Any]:
        return {"type": "StageEntered", "ordinal": self.ordinal}


@dataclass(frozen=True)
class StageCompleted:
    ordinal: int
    duration_ms: int

    def to_dict(self) -> dict[str, Any]:
        return {"type": "StageCompleted", "ordinal": self.ordinal, "duration_ms": self.duration_ms}


@dataclass(frozen=True)
class ErrorDetected:
    kind: ErrorKind
    detail: Mapping[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {"type": "ErrorDetected", "kind": self.kind.value, "detail": dict(self.detail)}


@dataclass(frozen=True)
class Guidance:
    text_key: str
    stage: int
    parameters: Mapping[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": "Guidance",
            "text_key": self.text_key,
            "stage": self.stage,
            "parameters": dict(self.parameters),
        }


@dataclass(frozen=True)
class AssemblyComplete:
    total_ms: int

    def to_dict(self) -> dict[str, Any]:
        return {"type": "AssemblyComplete", "total_ms": self.total_ms}


VerifierEvent = Union[StageEntered, StageCompleted, ErrorDetected, Guidance, AssemblyComplete]

_GUIDANCE_KEYS = {
    ErrorKind.WRONG_PART: "guidance.wrong_part",
    ErrorKind.WRONG_PLACEMENT: "guidance.reposition_part",
    ErrorKind.WRONG_ANGLE: "guidance.rotate_part",
    ErrorKind.SCREW_NOT_TIGHTENED: "guidance.retighten",
    ErrorKind.NULL_ACTION: "guidance.resume_action",
    ErrorKind.CAMERA_OFFLINE: "guidance.camera_offline",
}


def guidance_text(event: ErrorDetected, stage: StageSpec) -> Guidance:
    """Deterministic guidance for an error: stable key + parameters for report diffing."""
    return Guidance(
        text_key=_GUIDANCE_KEYS[event.kind],
        stage=stage.ordinal,
        parameters=dict(event.detail),
    )


# --- fused observation -------------------------------------------------------------

@dataclass(frozen=True)
class FusedObservation:
    """Per-tick merge of every input source; absent means stale or never seen, not zero."""

    tick_ms: int
    detections: DetectionFrame | None = None
    depth_mm: Mapping[PartClass, float] = field(default_factory=dict)
    acf: ActionConfidence | None = None
    wrist: tuple[float, float] | None = None
    obj_angle: ObjAngle | None = None
    holes: Mapping[str, HoleStatus] = field(default_factory=dict)
    stale: Mapping[str, bool] = field(default_factory=dict)

    def hole(self, hole_id: str) -> HoleStatus:
        return self.holes.get(hole_id, UNKNOWN_STATUS)


# --- verifier state ----------------------------------------------------------------

@dataclass
class VerifierState:
    stage_ordinal: int = 1
    phase: Phase = Phase.PART_ASSEMBLY
    hold: int = 0
    violation_hold: int = 0
    wrong_hold: int = 0
    wrong_part_seen: str | None = None
    entered_ms: int | None = None
    session_start_ms: int | None = None
    last_activity_ms: int | None = None
    pending_error: dict[str, Any] | None = None
    last_guidance_ms: int | None = None
    holes_done: frozenset[str] = frozenset()
    failed_hole: str | None = None
    tight_high: bool = False
    last_tight_high_ms: int | None = None
    episode_scored: bool = False
    camera_offline: bool = False
    prev_tick_ms: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": STATE_SCHEMA_VERSION,
            "stage_ordinal": self.stage_ordinal,
            "phase": self.phase.value,
            "hold": self.hold,
            "violation_hold": self.violation_hold,
            "wrong_hold": self.wrong_hold,
            "wrong_part_seen": self.wrong_part_seen,
            "entered_ms": self.entered_ms,
            "session_start_ms": self.session_start_ms,
            "last_activity_ms": self.last_activity_ms,
            "pending_error": self.pending_error,
            "last_guidance_ms": self.last_guidance_ms,
            "holes_done": sorted(self.holes_done),
            "failed_hole": self.failed_hole,
            "tight_high": self.tight_high,
            "last_tight_high_ms": self.last_tight_high_ms,
            "episode_scored": self.episode_scored,
            "camera_offline": self.camera_offline,
            "prev_tick_ms": self.prev_tick_ms,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "VerifierState":
        if raw.get("version") != STATE_SCHEMA_VERSION:
            raise InconsistentState(f"unsupported state version {raw.get('version')!r}")
        data = dict(raw)
        data.pop("version")
        data["phase"] = Phase(data["phase"])
        data["holes_done"] = frozenset(data.get("holes_done", ()))
        return cls(**data)


def entry_phase(kind: StageKind) -> Phase:
    return {
        StageKind.PART_PLACEMENT: Phase.PART_ASSEMBLY,
        StageKind.SCREW_FASTENING: Phase.SCREW_ASSEMBLY,
        StageKind.VERIFICATION: Phase.PART_VERIFICATION,
        StageKind.COMPLETION: Phase.FINAL,
    }[kind]


def initial_state(plan: AssemblyPlan) -> VerifierState:
    if not plan.stages:
        raise InconsistentState("plan has no stages")
    return VerifierState(stage_ordinal=1, phase=entry_phase(plan.stages[0].kind))


# --- step helpers ------------------------------------------------------------------

def _acf_value(acf: ActionConfidence | None, label) -> float:
    return acf.get(label) if acf is not None else 0.0


def _grasp_satisfied(obs: FusedObservation, stage: StageSpec, cfg: ThresholdConfig) -> bool:
    if stage.part is None or stage.grasp is None:
        return False
    det = obs.detections.best(stage.part, cfg.tau_det) if obs.detections else None
    return det is not None and _acf_value(obs.acf, stage.grasp) >= cfg.tau_act


def _wrong_part_candidate(obs: FusedObservation, expected: PartClass | None, cfg: ThresholdConfig) -> PartClass | None:
    if obs.detections is None or obs.acf is None or obs.wrist is None:
        return None
    wx, wy = obs.wrist
    best: PartClass | None = None
    best_conf = 0.0
    for d in obs.detections.detections:
        if d.part is expected or d.conf < cfg.tau_det:
            continue
        if not d.intersects(wx, wy, HAND_REGION_SIDE, HAND_REGION_SIDE):
            continue
        if obs.acf.get(GRASP_CLASS[d.part]) < cfg.tau_act:
            continue
        if d.conf > best_conf:
            best, best_conf = d.part, d.conf
    return best


@dataclass
class _Placement:
    satisfied: bool = False
    violated: bool = False
    kind: ErrorKind = ErrorKind.WRONG_PLACEMENT
    params: dict[str, Any] = field(default_factory=dict)


def _placement_check(obs: FusedObservation, stage: StageSpec, cfg: ThresholdConfig) -> _Placement:
    """Evaluate the placement condition of a PartPlacement stage.

    A violation needs positive evidence: the part is visible, the grasp action
    has ended, and region, depth, or angle is demonstrably wrong. Missing
    signals count as neither satisfied nor violated.
    """
    out = _Placement()
    det = obs.detections.best(stage.part, cfg.tau_det) if obs.detections and stage.part else None
    if det is None or stage.target is None:
        return out
    in_region = stage.target.contains(det.cx, det.cy)

    depth_ok: bool | None = True
    if stage.expected_depth_mm is not None:
        filtered = obs.depth_mm.get(stage.part)
        depth_ok = None if filtered is None else abs(filtered - stage.expected_depth_mm) <= cfg.depth_tol_mm

    angle_ok: bool | None = True
    if stage.angle is not None:
        if obs.obj_angle is None:
            angle_ok = None
        else:
            angle_ok = circ_diff(obs.obj_angle.degrees, stage.angle.expected_deg) <= stage.angle.tol_deg

    out.satisfied = in_region and depth_ok is True and angle_ok is True
    if out.satisfied:
        return out

    catch_active = stage.grasp is not None and _acf_value(obs.acf, stage.grasp) >= cfg.tau_act
    if catch_active:
        return out
    if in_region and depth_ok is not False and angle_ok is False:
        out.violated = True
        out.kind = ErrorKind.WRONG_ANGLE
        out.params = {
            "measured": obs.obj_angle.degrees if obs.obj_angle else None,
            "expected": stage.angle.expected_deg,
            "tol": stage.angle.tol_deg,
        }
    elif not in_region or depth_ok is False:
        out.violated = True
        out.kind = ErrorKind.WRONG_PLACEMENT
        out.params = {
            "part": stage.part.value,
            "target": stage.target.to_dict(),
        }
    return out


class _Stepper:
    """One step() invocation; collects events against a mutable state copy."""

    def __init__(self, state: VerifierState, obs: FusedObservation, plan: AssemblyPlan, cfg: ThresholdConfig):
        self.s = replace(state)
        self.obs = obs
        self.plan = plan
        self.cfg = cfg
        self.now = obs.tick_ms
        self.events: list[VerifierEvent] = []

    @property
    def stage(self) -> StageSpec:
        return self.plan.stages[self.s.stage_ordinal - 1]

    def emit_error(self, kind: ErrorKind, params: dict[str, Any], set_pending: bool = True) -> None:
        event = ErrorDetected(kind=kind, detail=params)
        self.events.append(event)
        self.events.append(guidance_text(event, self.stage))
        self.s.last_guidance_ms = self.now
        if set_pending:
            self.s.pending_error = {"kind": kind.value, "params": dict(params)}

    def reemit_guidance(self) -> None:
        s = self.s
        if s.pending_error is None or s.last_guidance_ms is None:
            return
        if self.now - s.last_guidance_ms >= self.cfg.guidance_reemit_ms:
            event = ErrorDetected(ErrorKind(s.pending_error["kind"]), s.pending_error["params"])
            self.events.append(guidance_text(event, self.stage))
            s.last_guidance_ms = self.now

    def reset_stage_state(self) -> None:
        s = self.s
        s.hold = 0
        s.violation_hold = 0
        s.wrong_hold = 0
        s.wrong_part_seen = None
        s.pending_error = None
        s.last_guidance_ms = None
        s.holes_done = frozenset()
        s.failed_hole = None
        s.tight_high = False
        s.last_tight_high_ms = None
        s.episode_scored = False
        s.camera_offline = False

    def enter_phase(self, phase: Phase) -> None:
        self.s.phase = phase
        self.s.hold = 0
        self.s.violation_hold = 0
        self.s.wrong_hold = 0

    # --- hole helpers ---

    def hole_watch(self, hole_ids) -> dict[str, HoleStatus]:
        return {h: self.obs.hole(h) for h in hole_ids}

    def offline_hold(self, statuses: Mapping[str, HoleStatus]) -> bool:
        """CameraOffline handling: hold without progress or failure while any
        watched hole is Unknown. Returns True when the step should stop here."""
        unknown = sorted(h for h, st in statuses.items() if st.state is HoleState.UNKNOWN)
        if not unknown:
            self.s.camera_offline = False
            return False
        if not self.s.camera_offline:
            self.s.camera_offline = True
            self.emit_error(ErrorKind.CAMERA_OFFLINE, {"holes": unknown}, set_pending=False)
        return True

    def track_tightening(self) -> bool:
        """Update the tightening-episode tracker; True when an episode just ended."""
        s = self.s
        if self.obs.acf is None:
            return False
        if self.obs.acf.tightening >= self.cfg.tau_act:
            if not s.tight_high:
                s.tight_high = True
                s.episode_scored = False
            s.last_tight_high_ms = self.now
            return False
        if s.tight_high:
            s.tight_high = False
            return True
        return False

    def tightening_recent(self) -> bool:
        return (
            self.s.last_tight_high_ms is not None
            and self.now - self.s.last_tight_high_ms <= self.cfg.action_window_ms
        )

    # --- phase handlers ---

    def part_assembly(self) -> None:
        s, cfg, stage = self.s, self.cfg, self.stage
        if _grasp_satisfied(self.obs, stage, cfg):
            s.hold += 1
        else:
            s.hold = 0
        if s.hold >= cfg.hold_ticks:
            self.enter_phase(Phase.PART_VERIFICATION)
            return

        wrong = _wrong_part_candidate(self.obs, stage.part, cfg)
        if wrong is not None:
            s.wrong_hold += 1
            s.wrong_part_seen = wrong.value
        else:
            s.wrong_hold = 0
            s.wrong_part_seen = None
        if s.wrong_hold >= cfg.hold_ticks:
            self.emit_error(
                ErrorKind.WRONG_PART,
                {"expected": stage.part.value if stage.part else None, "got": s.wrong_part_seen},
            )
            self.enter_phase(Phase.PART_ASSEMBLY_CORRECTION)
            return

        if s.last_activity_ms is not None and self.now - s.last_activity_ms >= cfg.null_window_ms:
            self.emit_error(ErrorKind.NULL_ACTION,
                            {"expected": stage.part.value if stage.part else None},
                            set_pending=False)
            s.last_activity_ms = self.now

    def part_assembly_correction(self) -> None:
        s, cfg = self.s, self.cfg
        if _grasp_satisfied(self.obs, self.stage, cfg):
            s.hold += 1
        else:
            s.hold = 0
        if s.hold >= cfg.hold_ticks:
            s.pending_error = None
            s.last_guidance_ms = None
            self.enter_phase(Phase.PART_VERIFICATION)
            return
        self.reemit_guidance()

    def part_verification(self) -> None:
        if self.stage.kind is StageKind.VERIFICATION:
            self.verification_stage()
            return
        s, cfg = self.s, self.cfg
        check = _placement_check(self.obs, self.stage, cfg)
        if check.satisfied:
            s.hold += 1
            s.violation_hold = 0
        else:
            s.hold = 0
            if check.violated:
                s.violation_hold += 1
            else:
                s.violation_hold = 0
        if s.hold >= cfg.hold_ticks:
            self.enter_phase(Phase.SCREW_ASSEMBLY if self.stage.holes else Phase.STAGE_COMPLETE)
            return
        if s.violation_hold >= cfg.hold_ticks:
            self.emit_error(check.kind, check.params)
            self.enter_phase(Phase.PART_ASSEMBLY_CORRECTION)

    def verification_stage(self) -> None:
        s, cfg, stage = self.s, self.cfg, self.stage
        statuses = self.hole_watch(stage.holes)
        if self.offline_hold(statuses):
            return
        parts_ok = all(
            self.obs.detections is not None and self.obs.detections.best(p, cfg.tau_det) is not None
            for p in stage.verify_parts
        )
        holes_ok = all(st.state is HoleState.ASSEMBLED for st in statuses.values())
        if parts_ok and holes_ok:
            s.hold += 1
        else:
            s.hold = 0
        if s.hold >= cfg.hold_ticks:
            self.enter_phase(Phase.STAGE_COMPLETE)

    def screw_assembly(self) -> None:
        s, cfg, stage = self.s, self.cfg, self.stage
        unfinished = [h for h in stage.holes if h not in s.holes_done]
        statuses = self.hole_watch(unfinished)
        if self.offline_hold(statuses):
            return

        episode_ended = self.track_tightening()
        recent = self.tightening_recent()
        for h in unfinished:
            if statuses[h].state is HoleState.ASSEMBLED and recent:
                s.holes_done = s.holes_done | {h}
                s.episode_scored = True

        if episode_ended and not s.episode_scored:
            target = next((h for h in stage.holes if h not in s.holes_done), None)
            if target is not None and self.obs.hole(target).state is not HoleState.ASSEMBLED:
                s.failed_hole = target
                self.emit_error(ErrorKind.SCREW_NOT_TIGHTENED, {"hole": target})
                self.enter_phase(Phase.SCREW_ASSEMBLY_CORRECTION)
                return

        if all(h in s.holes_done for h in stage.holes):
            self.enter_phase(Phase.STAGE_COMPLETE)

    def screw_assembly_correction(self) -> None:
        s = self.s
        failed = s.failed_hole
        if failed is None:
            self.enter_phase(Phase.SCREW_ASSEMBLY)
            return
        statuses = self.hole_watch([failed])
        if self.offline_hold(statuses):
            return
        self.track_tightening()
        if statuses[failed].state is HoleState.ASSEMBLED and self.tightening_recent():
            s.holes_done = s.holes_done | {failed}
            s.failed_hole = None
            s.pending_error = None
            s.last_guidance_ms = None
            s.episode_scored = True
            self.enter_phase(Phase.SCREW_ASSEMBLY)
            return
        self.reemit_guidance()

    def stage_complete(self) -> None:
        s = self.s
        entered = s.entered_ms if s.entered_ms is not None else self.now
        self.events.append(StageCompleted(ordinal=s.stage_ordinal, duration_ms=self.now - entered))
        if s.stage_ordinal >= len(self.plan.stages):
            self.finish()
            return
        s.stage_ordinal += 1
        s.entered_ms = self.now
        self.reset_stage_state()
        self.events.append(StageEntered(ordinal=s.stage_ordinal))
        nxt = self.stage
        if nxt.kind is StageKind.COMPLETION:
            self.events.append(StageCompleted(ordinal=s.stage_ordinal, duration_ms=0))
            self.finish()
        else:
            self.enter_phase(entry_phase(nxt.kind))

    def finish(self) -> None:
        start = self.s.session_start_ms if self.s.session_start_ms is not None else self.now
        self.events.append(AssemblyComplete(total_ms=self.now - start))
        self.s.phase = Phase.FINAL


def step(
    state: VerifierState,
    obs: FusedObservation,
    plan: AssemblyPlan,
    cfg: ThresholdConfig,
) -> tuple[VerifierState, list[VerifierEvent]]:
    """Advance the verifier by one fused tick; pure, state is copied not mutated."""
    if not 1 <= state.stage_ordinal <= len(plan.stages):
        raise InconsistentState(
            f"stage ordinal {state.stage_ordinal} outside plan of {len(plan.stages)} stages"
        )
    if state.prev_tick_ms is not None and obs.tick_ms <= state.prev_tick_ms:
        raise ValueError(f"observation tick {obs.tick_ms} not after {state.prev_tick_ms}")

    run = _Stepper(state, obs, plan, cfg)
    s = run.s
    s.prev_tick_ms = run.now
    if s.session_start_ms is None:
        s.session_start_ms = run.now
        s.last_activity_ms = run.now
    if s.entered_ms is None:
        s.entered_ms = run.now
        run.events.append(StageEntered(ordinal=s.stage_ordinal))
        if run.stage.kind is StageKind.COMPLETION:
            run.events.append(StageCompleted(ordinal=s.stage_ordinal, duration_ms=0))
            run.finish()
            return s, run.events

    has_detections = obs.detections is not None and len(obs.detections.detections) > 0
    if obs.acf is not None or has_detections:
        s.last_activity_ms = run.now

    handler = {
        Phase.PART_ASSEMBLY: run.part_assembly,
        Phase.PART_ASSEMBLY_CORRECTION: run.part_assembly_correction,
        Phase.PART_VERIFICATION: run.part_verification,
        Phase.SCREW_ASSEMBLY: run.screw_assembly,
        Phase.SCREW_ASSEMBLY_CORRECTION: run.screw_assembly_correction,
        Phase.STAGE_COMPLETE: run.stage_complete,
        Phase.FINAL: lambda: None,
    }[s.phase]
    handler()
    return s, run.events
