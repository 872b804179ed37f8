"""Declarative assembly plans: schema, validation, JSON (de)serialization.

The built-in 21-stage hard-drive plan ships as package data, not code, so
stage corrections never require engine changes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Any, Mapping

from .model import ActionLabel, GRASP_CLASS, PartClass, ValidationError

PLAN_SCHEMA_VERSION = 1

_CATCH_LABELS = (ActionLabel.CATCH_BIG, ActionLabel.CATCH_SMALL)


class StageKind(str, Enum):
    PART_PLACEMENT = "PartPlacement"
    SCREW_FASTENING = "ScrewFastening"
    VERIFICATION = "Verification"
    COMPLETION = "Completion"


@dataclass(frozen=True)
class Region:
    """Normalized rectangle, center + size, same convention as detection boxes."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v) or not 0.0 <= v <= 1.0:
                raise ValidationError(name, v)
        if self.w <= 0 or self.h <= 0:
            raise ValidationError("w/h", (self.w, self.h), "must be > 0")

    def contains(self, x: float, y: float) -> bool:
        return abs(x - self.cx) * 2 <= self.w and abs(y - self.cy) * 2 <= self.h

    def to_dict(self) -> dict[str, float]:
        return {"cx": self.cx, "cy": self.cy, "w": self.w, "h": self.h}

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "Region":
        _check_keys(raw, {"cx", "cy", "w", "h"}, "region")
        return cls(**{k: float(raw[k]) for k in ("cx", "cy", "w", "h")})


@dataclass(frozen=True)
class AngleConstraint:
    expected_deg: float
    tol_deg: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.expected_deg < 360.0:
            raise ValidationError("expected_deg", self.expected_deg, "must lie in [0, 360)")
        if not self.tol_deg > 0:
            raise ValidationError("tol_deg", self.tol_deg, "must be > 0")


@dataclass(frozen=True)
class StageSpec:
    id: str
    ordinal: int
    kind: StageKind
    part: PartClass | None = None
    grasp: ActionLabel | None = None
    target: Region | None = None
    expected_depth_mm: float | None = None
    angle: AngleConstraint | None = None
    holes: tuple[str, ...] = ()
    verify_parts: tuple[PartClass, ...] = ()


@dataclass(frozen=True)
class AssemblyPlan:
    plan_id: str
    version: int
    stages: tuple[StageSpec, ...]
    holes: Mapping[str, Region] = field(default_factory=dict)

    def stage(self, ordinal: int) -> StageSpec:
        return self.stages[ordinal - 1]


@dataclass(frozen=True)
class PlanDiagnostic:
    stage_id: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"[{self.rule}] stage {self.stage_id}: {self.message}"


def validate_plan(plan: AssemblyPlan) -> list[PlanDiagnostic]:
    """Return every violated plan invariant; an empty list means the plan is valid."""
    diags: list[PlanDiagnostic] = []

    seen_ids: set[str] = set()
    for s in plan.stages:
        if s.id in seen_ids:
            diags.append(PlanDiagnostic(s.id, "DuplicateStageId", "stage id appears twice"))
        seen_ids.add(s.id)

    ordinals = [s.ordinal for s in plan.stages]
    if ordinals != list(range(1, len(plan.stages) + 1)):
        diags.append(
            PlanDiagnostic("-", "NonContiguousOrdinals", f"ordinals must be 1..{len(plan.stages)}, got {ordinals}")
        )

    for s in plan.stages:
        if s.kind is StageKind.PART_PLACEMENT:
            if s.part is None or s.grasp is None or s.target is None:
                diags.append(PlanDiagnostic(s.id, "MissingPlacementFields", "placement needs part, grasp, target"))
            if s.grasp is not None and s.grasp not in _CATCH_LABELS:
                diags.append(PlanDiagnostic(s.id, "BadGrasp", f"grasp must be a catch action, got {s.grasp}"))
            if s.part is not None and s.grasp is not None and GRASP_CLASS.get(s.part) is not s.grasp:
                diags.append(
                    PlanDiagnostic(s.id, "GraspSizeMismatch", f"{s.part.value} takes {GRASP_CLASS[s.part].value}")
                )
        elif s.kind is StageKind.SCREW_FASTENING:
            if not s.holes:
                diags.append(PlanDiagnostic(s.id, "MissingHoles", "screw fastening needs a nonempty hole list"))
        elif s.kind is StageKind.VERIFICATION:
            if not s.verify_parts and not s.holes:
                diags.append(PlanDiagnostic(s.id, "EmptyVerification", "verification needs parts or holes"))
        elif s.kind is StageKind.COMPLETION:
            if s.part or s.grasp or s.target or s.holes or s.verify_parts or s.angle:
                diags.append(PlanDiagnostic(s.id, "CompletionHasConditions", "completion stages carry no conditions"))
        for hole in s.holes:
            if hole not in plan.holes:
                diags.append(PlanDiagnostic(s.id, "UnknownHole", f"hole {hole!r} missing from the hole map"))

    return diags


# --- JSON form ---------------------------------------------------------------

def _check_keys(raw: Mapping[str, Any], known: set[str], where: str, strict: bool = True) -> None:
    unknown = set(raw) - known
    if unknown and strict:
        raise ValidationError(where, sorted(unknown), "unknown fields")


_STAGE_KEYS = {
    "id", "ordinal", "kind", "part", "grasp", "target",
    "expected_depth_mm", "angle", "holes", "verify_parts",
}


def stage_from_dict(raw: Mapping[str, Any], strict: bool = True) -> StageSpec:
    _check_keys(raw, _STAGE_KEYS, f"stage {raw.get('id', '?')}", strict)
    try:
        kind = StageKind(raw["kind"])
    except (KeyError, ValueError):
        raise ValidationError("kind", raw.get("kind"), "unknown stage kind") from None
    angle = None
    if raw.get("angle") is not None:
        a = raw["angle"]
        _check_keys(a, {"expected_deg", "tol_deg"}, "angle", strict)
        angle = AngleConstraint(float(a["expected_deg"]), float(a["tol_deg"]))
    return StageSpec(
        id=str(raw["id"]),
        ordinal=int(raw["ordinal"]),
        kind=kind,
        part=PartClass.parse(raw["part"]) if raw.get("part") is not None else None,
        grasp=ActionLabel.parse(raw["grasp"]) if raw.get("grasp") is not None else None,
        target=Region.from_dict(raw["target"]) if raw.get("target") is not None else None,
        expected_depth_mm=float(raw["expected_depth_mm"]) if raw.get("expected_depth_mm") is not None else None,
        angle=angle,
        holes=tuple(str(h) for h in raw.get("holes", ())),
        verify_parts=tuple(PartClass.parse(p) for p in raw.get("verify_parts", ())),
    )


def stage_to_dict(s: StageSpec) -> dict[str, Any]:
    out: dict[str, Any] = {"id": s.id, "ordinal": s.ordinal, "kind": s.kind.value}
    if s.part is not None:
        out["part"] = s.part.value
    if s.grasp is not None:
        out["grasp"] = s.grasp.value
    if s.target is not None:
        out["target"] = s.target.to_dict()
    if s.expected_depth_mm is not None:
        out["expected_depth_mm"] = s.expected_depth_mm
    if s.angle is not None:
        out["angle"] = {"expected_deg": s.angle.expected_deg, "tol_deg": s.angle.tol_deg}
    if s.holes:
        out["holes"] = list(s.holes)
    if s.verify_parts:
        out["verify_parts"] = [p.value for p in s.verify_parts]
    return out


def plan_from_dict(raw: Mapping[str, Any], strict: bool = True) -> AssemblyPlan:
    _check_keys(raw, {"plan_id", "version", "stages", "holes"}, "plan", strict)
    version = raw.get("version")
    if version != PLAN_SCHEMA_VERSION:
        raise ValidationError("version", version, f"expected schema version {PLAN_SCHEMA_VERSION}")
    holes = {str(k): Region.from_dict(v) for k, v in raw.get("holes", {}).items()}
    stages = tuple(stage_from_dict(s, strict) for s in raw.get("stages", ()))
    return AssemblyPlan(plan_id=str(raw["plan_id"]), version=int(version), stages=stages, holes=holes)


def plan_to_dict(plan: AssemblyPlan) -> dict[str, Any]:
    return {
        "plan_id": plan.plan_id,
        "version": plan.version,
        "holes": {k: plan.holes[k].to_dict() for k in sorted(plan.holes)},
        "stages": [stage_to_dict(s) for s in plan.stages],
    }


def dumps_plan(plan: AssemblyPlan) -> str:
    return json.dumps(plan_to_dict(plan), indent=2, sort_keys=True) + "\n"


def loads_plan(text: str, strict: bool = True) -> AssemblyPlan:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError("plan", "<json>", f"not valid JSON: {e}") from None
    return plan_from_dict(raw, strict)


def load_plan(path: str, strict: bool = True) -> AssemblyPlan:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_plan(fh.read(), strict)


def builtin_hdd_plan() -> AssemblyPlan:
    """The bundled 21-stage hard-drive assembly plan."""
    text = resources.files("stageverify.data").joinpath("hdd_plan.json").read_text("utf-8")
    return loads_plan(text, strict=True)
