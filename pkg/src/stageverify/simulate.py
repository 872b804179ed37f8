"""Deterministic scenario simulator: generates replay streams against a plan.

The simulator runs a scripted operator through the plan on a flat desk scene:
parts appear at a pickup zone, get grasped with the matching static pose,
are carried into their targets, and screw holes transition Empty ->
InProcess -> Assembled under tightening gestures. Cadences: hand frames at
30 Hz, detections at ~15 Hz, hole reports every 100 ms.

Scenarios:
  happy        every stage satisfied in order, no errors
  cheat-screw  one tightening action with no hole transition (then corrected)
  wrong-part   a sustained wrong grasp at the arm stage (then corrected)
  skip-attempt a later stage's part pre-placed early; must not advance the FSM
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gesture import ACTION_POSES, NEUTRAL_POSE
from .model import ActionLabel, PartClass, canonicalize_angle
from .plan import AssemblyPlan, StageKind, StageSpec
from .replayio import (
    AngleRecord,
    DetRecord,
    HandRecord,
    HolesRecord,
    MetaRecord,
    ReplayRecord,
)
from .model import Detection, DetectionFrame, ObjAngle
from .screwlink import HoleReport, HoleState

SCENARIOS = ("happy", "cheat-screw", "wrong-part", "skip-attempt")

FRAME_MS = 33          # hand cadence (30 Hz)
DET_EVERY_MS = 66      # detection cadence
HOLES_EVERY_MS = 100   # close-camera report cadence

PICKUP = (0.15, 0.18)
REST = (0.93, 0.90)
CORNER = (0.93, 0.18)  # reach/retract waypoint that stays clear of the case
HAND_SCALE = 0.12
HAND_Z = 0.5

CASE_CENTER = (0.50, 0.55)
CASE_DEPTH_MM = 615.0

PART_SIZES: dict[PartClass, tuple[float, float]] = {
    PartClass.HDD_CASE: (0.50, 0.40),
    PartClass.ACTUATOR_BASE: (0.14, 0.14),
    PartClass.ACTUATOR_ARM: (0.16, 0.10),
    PartClass.ARM_ELECTRO: (0.08, 0.08),
    PartClass.ACTUATOR_COVER: (0.14, 0.12),
    PartClass.PLATTER: (0.20, 0.20),
    PartClass.SPINDLE: (0.08, 0.08),
    PartClass.CASE_COVER: (0.42, 0.34),
    PartClass.LOGI_BOARD: (0.24, 0.10),
    PartClass.SCREW: (0.03, 0.03),
}

PLACE_IDLE_MS = 11500
SCREW_IDLE_MS = 10500
VERIFY_IDLE_MS = 1000
GRASP_MS = 1700
CARRY_MS = 800
SETTLE_MS = 700
LEG_MS = 150
CARRY_ANGLE_DEG = 120.0  # arm orientation while being carried

WRONG_PART_STAGE = 2
CHEAT_STAGE = 4


def _lerp(a: tuple[float, float], b: tuple[float, float], alpha: float) -> tuple[float, float]:
    return (a[0] + (b[0] - a[0]) * alpha, a[1] + (b[1] - a[1]) * alpha)


@dataclass
class _Scene:
    wrist: tuple[float, float] = REST
    pose: tuple = NEUTRAL_POSE
    parts: dict[PartClass, tuple[float, float]] = field(default_factory=dict)
    depths: dict[PartClass, float] = field(default_factory=dict)
    hole_states: dict[str, HoleState] = field(default_factory=dict)
    angle_deg: float | None = None


class _Builder:
    def __init__(self, plan: AssemblyPlan, seed: int):
        self.plan = plan
        self.rng = np.random.default_rng(seed)
        self.records: list[ReplayRecord] = [MetaRecord(plan_id=plan.plan_id, tick_ms=FRAME_MS)]
        self.t = 0
        self.next_det = 0
        self.next_holes = 0
        self.scene = _Scene()
        self.scene.parts[PartClass.HDD_CASE] = CASE_CENTER
        self.scene.depths[PartClass.HDD_CASE] = CASE_DEPTH_MM
        for stage in plan.stages:
            if stage.part is not None and stage.expected_depth_mm is not None:
                self.scene.depths[stage.part] = stage.expected_depth_mm
        for hole in plan.holes:
            self.scene.hole_states[hole] = HoleState.EMPTY

    # --- emission ---

    def _emit_hand(self, t: int) -> None:
        pose = np.asarray(self.scene.pose, dtype=np.float64)
        base = np.array([self.scene.wrist[0], self.scene.wrist[1], HAND_Z])
        pts = base + HAND_SCALE * pose + self.rng.normal(0.0, 0.002, pose.shape)
        self.records.append(
            HandRecord(t_ms=t, hand_index=0, points=tuple((round(x, 4), round(y, 4), round(z, 4)) for x, y, z in pts))
        )

    def _emit_det(self, t: int) -> None:
        dets = []
        for part, center in self.scene.parts.items():
            w, h = PART_SIZES[part]
            conf = round(float(0.90 + self.rng.uniform(-0.02, 0.03)), 4)
            depth = round(float(self.scene.depths.get(part, CASE_DEPTH_MM) + self.rng.uniform(-2.0, 2.0)), 1)
            dets.append(
                Detection(
                    part=part,
                    cx=round(min(1.0, max(0.0, center[0] + float(self.rng.uniform(-0.002, 0.002)))), 4),
                    cy=round(min(1.0, max(0.0, center[1] + float(self.rng.uniform(-0.002, 0.002)))), 4),
                    w=w, h=h, conf=conf, depth_mm=depth,
                )
            )
        self.records.append(DetRecord(t_ms=t, frame=DetectionFrame(t_ms=t, detections=tuple(dets))))
        if self.scene.angle_deg is not None:
            deg = canonicalize_angle(self.scene.angle_deg + float(self.rng.uniform(-0.3, 0.3)))
            self.records.append(
                AngleRecord(t_ms=t, angle=ObjAngle(t_ms=t, degrees=round(deg, 2) % 360.0, conf=0.9))
            )

    def _emit_holes(self, t: int) -> None:
        reports = tuple(
            HoleReport(
                hole_id=hole,
                state=self.scene.hole_states[hole],
                conf=round(float(0.88 + self.rng.uniform(-0.05, 0.05)), 4),
                t_ms=t,
            )
            for hole in sorted(self.scene.hole_states)
        )
        self.records.append(HolesRecord(t_ms=t, reports=reports))

    def advance(
        self,
        dur_ms: int,
        wrist_to: tuple[float, float] | None = None,
        move_part: tuple[PartClass, tuple[float, float]] | None = None,
    ) -> None:
        """Run the clock forward, interpolating wrist/part motion over the segment.

        Durations snap up to the hand-frame grid so inter-frame spacing stays
        uniform across segment boundaries.
        """
        dur_ms = ((dur_ms + FRAME_MS - 1) // FRAME_MS) * FRAME_MS
        start = self.t
        wrist_from = self.scene.wrist
        part_from = self.scene.parts.get(move_part[0]) if move_part else None
        end = start + dur_ms
        t = start
        while t < end:
            alpha = (t - start) / dur_ms
            if wrist_to is not None:
                self.scene.wrist = _lerp(wrist_from, wrist_to, alpha)
            if move_part is not None and part_from is not None:
                self.scene.parts[move_part[0]] = _lerp(part_from, move_part[1], alpha)
            while self.next_holes <= t:
                self._emit_holes(self.next_holes)
                self.next_holes += HOLES_EVERY_MS
            while self.next_det <= t:
                self._emit_det(self.next_det)
                self.next_det += DET_EVERY_MS
            self._emit_hand(t)
            t += FRAME_MS
        self.t = end
        if wrist_to is not None:
            self.scene.wrist = wrist_to
        if move_part is not None:
            self.scene.parts[move_part[0]] = move_part[1]

    # --- scripted moves ---

    def idle(self, dur_ms: int) -> None:
        self.scene.pose = NEUTRAL_POSE
        self.advance(dur_ms)

    def reach(self) -> None:
        self.scene.pose = NEUTRAL_POSE
        self.advance(LEG_MS, wrist_to=CORNER)
        self.advance(LEG_MS, wrist_to=PICKUP)

    def retract(self) -> None:
        self.scene.pose = NEUTRAL_POSE
        self.advance(LEG_MS, wrist_to=CORNER)
        self.advance(LEG_MS, wrist_to=REST)

    def grasp_place(self, stage: StageSpec) -> None:
        part, target = stage.part, stage.target
        target_center = (target.cx, target.cy)
        self.scene.parts[part] = PICKUP
        self.scene.pose = ACTION_POSES[stage.grasp]
        if stage.angle is not None:
            self.scene.angle_deg = CARRY_ANGLE_DEG
        self.advance(GRASP_MS)
        self.advance(CARRY_MS, wrist_to=target_center, move_part=(part, target_center))
        # release and withdraw right away: the verifier enters the next stage
        # shortly after placement holds, and a hand lingering over the scene
        # would look like a wrong-part grasp while the catch action decays
        self.scene.pose = NEUTRAL_POSE
        if stage.angle is not None:
            self.scene.angle_deg = stage.angle.expected_deg
        self.retract()
        self.advance(SETTLE_MS)
        if stage.angle is None:
            self.scene.angle_deg = None

    def wrong_grasp(self, wrong_part: PartClass) -> None:
        """A sustained grasp of the wrong part at the pickup zone, then put back."""
        self.scene.wrist = PICKUP
        self.scene.parts[wrong_part] = PICKUP
        self.scene.pose = ACTION_POSES[ActionLabel.CATCH_BIG]
        self.advance(GRASP_MS)
        del self.scene.parts[wrong_part]
        self.scene.pose = NEUTRAL_POSE
        self.advance(900)

    def fasten_hole(self, hole: str, cheat: bool = False) -> None:
        if cheat:
            # tightening action with no screw: the hole never transitions
            self.scene.pose = ACTION_POSES[ActionLabel.TIGHTENING]
            self.advance(GRASP_MS)
            self.scene.pose = NEUTRAL_POSE
            self.advance(1600)  # long enough for the action confidence to decay
        self.scene.pose = ACTION_POSES[ActionLabel.TIGHTENING]
        self.advance(500)
        self.scene.hole_states[hole] = HoleState.IN_PROCESS
        self.advance(600)
        self.scene.hole_states[hole] = HoleState.ASSEMBLED
        self.advance(600)
        self.scene.pose = NEUTRAL_POSE
        self.advance(400)


def simulate_scenario(plan: AssemblyPlan, scenario: str, seed: int = 1) -> list[ReplayRecord]:
    """Generate the replay record stream for one scenario; deterministic per seed."""
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    b = _Builder(plan, seed)
    skip_target: tuple[PartClass, tuple[float, float]] | None = None
    if scenario == "skip-attempt":
        for stage in plan.stages:
            if stage.kind is StageKind.PART_PLACEMENT and stage.ordinal > 2:
                skip_target = (stage.part, (stage.target.cx, stage.target.cy))

    for stage in plan.stages:
        if stage.kind is StageKind.PART_PLACEMENT:
            if scenario == "skip-attempt" and stage.ordinal == 1 and skip_target:
                b.scene.parts[skip_target[0]] = skip_target[1]
            b.idle(PLACE_IDLE_MS)
            if scenario == "wrong-part" and stage.ordinal == WRONG_PART_STAGE:
                b.wrong_grasp(PartClass.PLATTER)
            else:
                b.reach()
            b.grasp_place(stage)
        elif stage.kind is StageKind.SCREW_FASTENING:
            b.idle(SCREW_IDLE_MS)
            for i, hole in enumerate(stage.holes):
                b.fasten_hole(hole, cheat=(scenario == "cheat-screw" and stage.ordinal == CHEAT_STAGE and i == 0))
        elif stage.kind is StageKind.VERIFICATION:
            b.idle(VERIFY_IDLE_MS)
        elif stage.kind is StageKind.COMPLETION:
            b.idle(800)
    return b.records
