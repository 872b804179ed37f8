"""Session orchestration: time-aligned fusion of input streams and replay runs.

All fusion is most-recent-within-TTL on a fixed tick grid. Replay runs are
pure functions of the input bytes, the plan, and the thresholds: timestamps
come from the replay clock, never the wall clock, so two runs of the same
file produce byte-identical reports.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Mapping, Sequence

from .depthfilter import DepthTrack
from .fsm import (
    AssemblyComplete,
    ErrorDetected,
    FusedObservation,
    Guidance,
    StageCompleted,
    StageEntered,
    VerifierEvent,
    VerifierState,
    initial_state,
    step,
)
from .gesture import (
    DegenerateHand,
    GestureConfig,
    GestureWindow,
    HandFrame,
    NearestTemplateClassifier,
    WindowClassifier,
    build_default_templates,
    classify_window,
    normalize_hand,
)
from .model import ActionConfidence, DetectionFrame, ObjAngle, PartClass, ThresholdConfig
from .plan import AssemblyPlan
from .replayio import (
    AcfRecord,
    AngleRecord,
    DetRecord,
    HandRecord,
    HolesRecord,
    MetaRecord,
    ReplayRecord,
    read_replay,
)
from .screwlink import HoleAggregate

_CORRECTION_ERRORS = {"WrongPart", "WrongPlacement", "WrongAngle", "ScrewNotTightened"}


class FusionBuffers:
    """Latest-record buffers per source plus the per-part depth filters."""

    def __init__(
        self,
        cfg: ThresholdConfig,
        classifier: WindowClassifier | None = None,
        gesture_cfg: GestureConfig = GestureConfig(),
    ):
        self.cfg = cfg
        self.gesture_cfg = gesture_cfg
        self.classifier = classifier or NearestTemplateClassifier(build_default_templates(gesture_cfg))
        self.last_det: DetectionFrame | None = None
        self.depth_tracks: dict[PartClass, DepthTrack] = {}
        self.windows: dict[int, GestureWindow] = {}
        self.hand_acf: dict[int, ActionConfidence] = {}
        self.hand_wrist: dict[int, tuple[int, tuple[float, float]]] = {}
        self.bypass_acf: ActionConfidence | None = None
        self.last_angle: ObjAngle | None = None
        self.holes = HoleAggregate()
        self.last_holes_ms: int | None = None

    def ingest(self, record: ReplayRecord) -> None:
        if isinstance(record, DetRecord):
            self.last_det = record.frame
            for part in {d.part for d in record.frame.detections}:
                best = record.frame.best(part)
                if best is not None and best.depth_mm is not None:
                    self.depth_tracks.setdefault(part, DepthTrack()).push(best.depth_mm)
        elif isinstance(record, HandRecord):
            wrist = record.points[0]
            self.hand_wrist[record.hand_index] = (record.t_ms, (wrist[0], wrist[1]))
            window = self.windows.setdefault(record.hand_index, GestureWindow(self.gesture_cfg))
            try:
                frame = normalize_hand(HandFrame(t_ms=record.t_ms, points=record.points))
            except DegenerateHand:
                return
            if window.push(frame):
                self.hand_acf[record.hand_index] = classify_window(window, self.classifier)
        elif isinstance(record, AngleRecord):
            self.last_angle = record.angle
        elif isinstance(record, HolesRecord):
            self.holes.ingest(record.reports)
            self.last_holes_ms = record.t_ms
        elif isinstance(record, AcfRecord):
            self.bypass_acf = record.acf
        elif isinstance(record, MetaRecord):
            pass
        else:
            raise TypeError(f"cannot ingest {record!r}")

    def fuse(self, now_ms: int) -> FusedObservation:
        return fuse_tick(self, now_ms, self.cfg)


def fuse_tick(buffers: FusionBuffers, now_ms: int, cfg: ThresholdConfig) -> FusedObservation:
    """Snap to the nearest tick-grid point and select the freshest record of
    each source whose age at that tick is within its TTL."""
    tick = ((now_ms + cfg.tick_ms // 2) // cfg.tick_ms) * cfg.tick_ms

    det = buffers.last_det
    if det is not None and not 0 <= tick - det.t_ms <= cfg.det_ttl_ms:
        det = None

    fresh_acfs = [a for a in buffers.hand_acf.values() if 0 <= tick - a.t_ms <= cfg.acf_ttl_ms]
    if buffers.bypass_acf is not None and 0 <= tick - buffers.bypass_acf.t_ms <= cfg.acf_ttl_ms:
        fresh_acfs.append(buffers.bypass_acf)
    acf: ActionConfidence | None = None
    for candidate in fresh_acfs:
        acf = candidate if acf is None else ActionConfidence.combine(acf, candidate)

    wrist = None
    wrist_t = None
    for t, xy in buffers.hand_wrist.values():
        if 0 <= tick - t <= cfg.acf_ttl_ms and (wrist_t is None or t > wrist_t):
            wrist, wrist_t = xy, t

    angle = buffers.last_angle
    if angle is not None and not 0 <= tick - angle.t_ms <= cfg.det_ttl_ms:
        angle = None

    holes = buffers.holes.snapshot(tick, cfg.hole_ttl_ms)
    depth = {part: track.value for part, track in buffers.depth_tracks.items() if track.value is not None}
    holes_stale = buffers.last_holes_ms is None or tick - buffers.last_holes_ms > cfg.hole_ttl_ms
    return FusedObservation(
        tick_ms=tick,
        detections=det,
        depth_mm=depth,
        acf=acf,
        wrist=wrist,
        obj_angle=angle,
        holes=holes,
        stale={"det": det is None, "acf": acf is None, "angle": angle is None, "holes": holes_stale},
    )


# --- event log and reports ----------------------------------------------------------

@dataclass(frozen=True)
class LogEntry:
    event_id: int
    t_ms: int
    event: VerifierEvent

    def to_dict(self) -> dict[str, Any]:
        return {"event_id": self.event_id, "t_ms": self.t_ms, "event": self.event.to_dict()}


@dataclass(frozen=True)
class StageError:
    kind: str
    t_ms: int
    guidance_key: str


@dataclass(frozen=True)
class StageRecord:
    ordinal: int
    duration_ms: int
    attempts: int
    errors: tuple[StageError, ...] = ()


@dataclass(frozen=True)
class OperationReport:
    session_id: str
    plan_id: str
    started_ms: int
    ended_ms: int
    stages: tuple[StageRecord, ...]
    stages_completed: int
    error_count: int
    total_ms: int
    outcome: str  # "Complete" | "Aborted"

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "plan_id": self.plan_id,
            "started_ms": self.started_ms,
            "ended_ms": self.ended_ms,
            "stages": [
                {
                    "ordinal": s.ordinal,
                    "duration_ms": s.duration_ms,
                    "attempts": s.attempts,
                    "errors": [
                        {"kind": e.kind, "t_ms": e.t_ms, "guidance_key": e.guidance_key} for e in s.errors
                    ],
                }
                for s in self.stages
            ],
            "totals": {
                "stages_completed": self.stages_completed,
                "error_count": self.error_count,
                "total_ms": self.total_ms,
            },
            "outcome": self.outcome,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "OperationReport":
        return cls(
            session_id=raw["session_id"],
            plan_id=raw["plan_id"],
            started_ms=raw["started_ms"],
            ended_ms=raw["ended_ms"],
            stages=tuple(
                StageRecord(
                    ordinal=s["ordinal"],
                    duration_ms=s["duration_ms"],
                    attempts=s["attempts"],
                    errors=tuple(StageError(e["kind"], e["t_ms"], e["guidance_key"]) for e in s["errors"]),
                )
                for s in raw["stages"]
            ),
            stages_completed=raw["totals"]["stages_completed"],
            error_count=raw["totals"]["error_count"],
            total_ms=raw["totals"]["total_ms"],
            outcome=raw["outcome"],
        )


def load_report(path: str) -> OperationReport:
    with open(path, "r", encoding="utf-8") as fh:
        return OperationReport.from_dict(json.load(fh))


def build_report(
    session_id: str,
    plan_id: str,
    log: Sequence[LogEntry],
    started_ms: int,
    ended_ms: int,
    outcome: str,
) -> OperationReport:
    stages: list[dict[str, Any]] = []
    current: dict[str, Any] | None = None
    error_count = 0
    completed = 0
    pending_error: tuple[str, int] | None = None

    for entry in log:
        event = entry.event
        if isinstance(event, StageEntered):
            current = {"ordinal": event.ordinal, "entered": entry.t_ms, "duration": None,
                       "attempts": 1, "errors": []}
            stages.append(current)
        elif isinstance(event, StageCompleted):
            completed += 1
            for rec in stages:
                if rec["ordinal"] == event.ordinal:
                    rec["duration"] = event.duration_ms
        elif isinstance(event, ErrorDetected):
            error_count += 1
            pending_error = (event.kind.value, entry.t_ms)
            if current is not None and event.kind.value in _CORRECTION_ERRORS:
                current["attempts"] += 1
        elif isinstance(event, Guidance) and pending_error is not None:
            kind, t = pending_error
            pending_error = None
            if current is not None:
                current["errors"].append(StageError(kind=kind, t_ms=t, guidance_key=event.text_key))

    return OperationReport(
        session_id=session_id,
        plan_id=plan_id,
        started_ms=started_ms,
        ended_ms=ended_ms,
        stages=tuple(
            StageRecord(
                ordinal=rec["ordinal"],
                duration_ms=rec["duration"] if rec["duration"] is not None else ended_ms - rec["entered"],
                attempts=rec["attempts"],
                errors=tuple(rec["errors"]),
            )
            for rec in stages
        ),
        stages_completed=completed,
        error_count=error_count,
        total_ms=ended_ms - started_ms,
        outcome=outcome,
    )


# --- replay runs ----------------------------------------------------------------------

@dataclass(frozen=True)
class TickResult:
    t_ms: int
    state: VerifierState
    events: tuple[VerifierEvent, ...]


class ReplayRunner:
    """Drives the verifier over a record stream on the fusion tick grid.

    Records with t <= T are ingested before the tick at T fires; the run stops
    once the machine reaches its final phase.
    """

    def __init__(
        self,
        plan: AssemblyPlan,
        cfg: ThresholdConfig,
        classifier: WindowClassifier | None = None,
        gesture_cfg: GestureConfig = GestureConfig(),
    ):
        self.plan = plan
        self.cfg = cfg
        self.buffers = FusionBuffers(cfg, classifier, gesture_cfg)
        self.state = initial_state(plan)
        self.complete = False

    def _tick(self, t: int) -> TickResult:
        obs = self.buffers.fuse(t)
        self.state, events = step(self.state, obs, self.plan, self.cfg)
        if any(isinstance(e, AssemblyComplete) for e in events):
            self.complete = True
        return TickResult(t_ms=t, state=self.state, events=tuple(events))

    def run(self, records: Iterable[ReplayRecord]) -> Iterator[TickResult]:
        tick_ms = self.cfg.tick_ms
        next_tick = 0
        last_t = 0
        for record in records:
            t = getattr(record, "t_ms", 0)
            last_t = max(last_t, t)
            while next_tick < t and not self.complete:
                yield self._tick(next_tick)
                next_tick += tick_ms
            if self.complete:
                return
            self.buffers.ingest(record)
        while next_tick <= last_t and not self.complete:
            yield self._tick(next_tick)
            next_tick += tick_ms


def run_replay(
    data: bytes | str,
    plan: AssemblyPlan,
    cfg: ThresholdConfig | None = None,
    classifier: WindowClassifier | None = None,
) -> tuple[OperationReport, list[LogEntry]]:
    """Run a recorded session end to end; deterministic in (bytes, plan, cfg)."""
    cfg = cfg or ThresholdConfig()
    raw = data.encode("utf-8") if isinstance(data, str) else data
    session_id = "r-" + hashlib.sha256(raw).hexdigest()[:12]

    runner = ReplayRunner(plan, cfg, classifier)
    log: list[LogEntry] = []
    ended = 0
    for result in runner.run(read_replay(raw)):
        ended = result.t_ms
        for event in result.events:
            log.append(LogEntry(event_id=len(log) + 1, t_ms=result.t_ms, event=event))
    outcome = "Complete" if runner.complete else "Aborted"
    report = build_report(session_id, plan.plan_id, log, started_ms=0, ended_ms=ended, outcome=outcome)
    return report, log
