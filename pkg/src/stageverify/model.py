"""Shared domain vocabulary: parts, detections, action confidences, angles, thresholds."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from enum import Enum
from typing import Any, Mapping


class ValidationError(ValueError):
    """A wire or replay value violated a field-range invariant.

    Values are rejected, never clamped, so replay verification stays
    bit-faithful.
    """

    def __init__(self, field_name: str, value: Any, reason: str = "out of range"):
        self.field_name = field_name
        self.value = value
        self.reason = reason
        super().__init__(f"{field_name}={value!r}: {reason}")


class InvalidAngle(ValueError):
    """Angle input was not a finite number."""


class PartClass(str, Enum):
    """The ten detectable hard-drive components."""

    HDD_CASE = "HDDCase"
    ACTUATOR_ARM = "ActuatorArm"
    PLATTER = "Platter"
    SCREW = "Screw"
    ACTUATOR_BASE = "ActuatorBase"
    ACTUATOR_COVER = "ActuatorCover"
    CASE_COVER = "CaseCover"
    SPINDLE = "Spindle"
    LOGI_BOARD = "LogiBoard"
    ARM_ELECTRO = "ArmElectro"

    @classmethod
    def parse(cls, name: str) -> "PartClass":
        try:
            return cls(name)
        except ValueError:
            raise ValidationError("part", name, "unknown part class") from None


class ActionLabel(str, Enum):
    """The four recognized hand actions."""

    CATCH_BIG = "CatchBig"
    CATCH_SMALL = "CatchSmall"
    TIGHTENING = "Tightening"
    DONE = "Done"

    @classmethod
    def parse(cls, name: str) -> "ActionLabel":
        try:
            return cls(name)
        except ValueError:
            raise ValidationError("action", name, "unknown action label") from None


# Grasp size class per part: screws and the small electro component take the
# small-grip action, everything else the large one.
GRASP_CLASS: Mapping[PartClass, ActionLabel] = {
    PartClass.HDD_CASE: ActionLabel.CATCH_BIG,
    PartClass.ACTUATOR_ARM: ActionLabel.CATCH_BIG,
    PartClass.PLATTER: ActionLabel.CATCH_BIG,
    PartClass.SCREW: ActionLabel.CATCH_SMALL,
    PartClass.ACTUATOR_BASE: ActionLabel.CATCH_BIG,
    PartClass.ACTUATOR_COVER: ActionLabel.CATCH_BIG,
    PartClass.CASE_COVER: ActionLabel.CATCH_BIG,
    PartClass.SPINDLE: ActionLabel.CATCH_BIG,
    PartClass.LOGI_BOARD: ActionLabel.CATCH_BIG,
    PartClass.ARM_ELECTRO: ActionLabel.CATCH_SMALL,
}


def _require_unit(name: str, value: float) -> float:
    if not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ValidationError(name, value, "not a finite number")
    if not 0.0 <= value <= 1.0:
        raise ValidationError(name, value)
    return float(value)


@dataclass(frozen=True)
class Detection:
    """One detected object box: normalized center/size, confidence, optional depth."""

    part: PartClass
    cx: float
    cy: float
    w: float
    h: float
    conf: float
    depth_mm: float | None = None

    def __post_init__(self) -> None:
        for name in ("cx", "cy", "w", "h", "conf"):
            _require_unit(name, getattr(self, name))
        if self.depth_mm is not None:
            if not math.isfinite(self.depth_mm) or self.depth_mm <= 0:
                raise ValidationError("depth_mm", self.depth_mm, "must be finite and > 0")

    def intersects(self, cx: float, cy: float, w: float, h: float) -> bool:
        """Axis-aligned overlap test against another center/size box."""
        return (
            abs(self.cx - cx) * 2 <= self.w + w
            and abs(self.cy - cy) * 2 <= self.h + h
        )


@dataclass(frozen=True)
class DetectionFrame:
    """All detections observed at one timestamp."""

    t_ms: int
    detections: tuple[Detection, ...] = ()

    def best(self, part: PartClass, min_conf: float = 0.0) -> Detection | None:
        """Highest-confidence detection of `part`, or None below `min_conf`."""
        best: Detection | None = None
        for d in self.detections:
            if d.part is part and d.conf >= min_conf:
                if best is None or d.conf > best.conf:
                    best = d
        return best


@dataclass(frozen=True)
class ActionConfidence:
    """Per-tick confidence for each of the four actions (independent, not normalized)."""

    t_ms: int
    catch_big: float
    catch_small: float
    tightening: float
    done: float

    def __post_init__(self) -> None:
        for name in ("catch_big", "catch_small", "tightening", "done"):
            _require_unit(name, getattr(self, name))

    def get(self, label: ActionLabel) -> float:
        return {
            ActionLabel.CATCH_BIG: self.catch_big,
            ActionLabel.CATCH_SMALL: self.catch_small,
            ActionLabel.TIGHTENING: self.tightening,
            ActionLabel.DONE: self.done,
        }[label]

    @staticmethod
    def combine(a: "ActionConfidence", b: "ActionConfidence") -> "ActionConfidence":
        """Element-wise maximum, used to merge per-hand confidences."""
        return ActionConfidence(
            t_ms=max(a.t_ms, b.t_ms),
            catch_big=max(a.catch_big, b.catch_big),
            catch_small=max(a.catch_small, b.catch_small),
            tightening=max(a.tightening, b.tightening),
            done=max(a.done, b.done),
        )


@dataclass(frozen=True)
class ObjAngle:
    """Measured part orientation relative to its reference pose."""

    t_ms: int
    degrees: float
    conf: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.degrees) or not 0.0 <= self.degrees < 360.0:
            raise ValidationError("degrees", self.degrees, "must lie in [0, 360)")
        _require_unit("conf", self.conf)


@dataclass(frozen=True)
class ThresholdConfig:
    """All tunable thresholds, TTLs, and clock settings.

    Defaults assume the 30 Hz capture rate; none of them come from
    measurement, they are documented engineering choices.
    """

    tau_det: float = 0.50
    tau_act: float = 0.80
    angle_tol_deg: float = 10.0
    depth_tol_mm: float = 15.0
    region_rule: str = "center_in"
    hold_ticks: int = 10
    det_ttl_ms: int = 100
    acf_ttl_ms: int = 200
    hole_ttl_ms: int = 500
    tick_ms: int = 33
    null_window_ms: int = 5000
    action_window_ms: int = 2000
    guidance_reemit_ms: int = 2000

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "region_rule":
                if value != "center_in":
                    raise ValidationError("region_rule", value, "unknown containment rule")
                continue
            if not isinstance(value, (int, float)) or not math.isfinite(value) or value <= 0:
                raise ValidationError(f.name, value, "must be positive")
        if self.hold_ticks < 1:
            raise ValidationError("hold_ticks", self.hold_ticks, "must be >= 1")

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ThresholdConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValidationError("config", sorted(unknown), "unknown config keys")
        return cls(**raw)


def canonicalize_angle(raw: float) -> float:
    """Reduce a signed angle in degrees to [0, 360)."""
    if not isinstance(raw, (int, float)) or not math.isfinite(raw):
        raise InvalidAngle(f"angle must be finite, got {raw!r}")
    result = math.fmod(float(raw), 360.0)
    if result < 0.0:
        result += 360.0
    # fmod can return 360.0 - eps rolled up to 360.0 after the shift
    return 0.0 if result >= 360.0 else result


def circ_diff(a: float, b: float) -> float:
    """Smallest angular distance between two angles, in [0, 180]."""
    if not math.isfinite(a) or not math.isfinite(b):
        raise InvalidAngle("angles must be finite")
    d = math.fmod(abs(a - b), 360.0)
    return min(d, 360.0 - d)
