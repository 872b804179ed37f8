"""Versioned JSONL files for recorded observation streams.

One record per line, "type" first, canonical key order; the first record must
be a meta record and timestamps never regress. Hole records use the same wire
shape as the screw-link Holes message, so live captures concatenate into
replays without transformation. Parse failures always name a 1-based line.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Iterator, Mapping, Union

from .canonjson import canonical_line
from .model import ActionConfidence, Detection, DetectionFrame, ObjAngle, PartClass, ValidationError
from .screwlink import HoleReport, ProtocolError, _report_from_wire, _report_to_wire

REPLAY_SCHEMA_VERSION = 1
REPLAY_SUFFIX = ".replay.jsonl"


class ReplayErrorReason(str, Enum):
    NOT_JSON = "NotJson"
    UNKNOWN_TYPE = "UnknownType"
    MISSING_META = "MissingMeta"
    TIMESTAMP_REGRESSION = "TimestampRegression"
    FIELD_RANGE = "FieldRange"


class ReplayFormatError(ValueError):
    def __init__(self, line: int, reason: ReplayErrorReason, detail: str = ""):
        self.line = line
        self.reason = reason
        self.detail = detail
        super().__init__(f"line {line}: {reason.value}" + (f" ({detail})" if detail else ""))


class InvariantViolation(ValueError):
    """Records handed to the writer break a replay invariant; nothing was written."""


@dataclass(frozen=True)
class MetaRecord:
    plan_id: str
    tick_ms: int
    schema: int = REPLAY_SCHEMA_VERSION

    t_ms = 0  # meta carries no timestamp; sorts before everything


@dataclass(frozen=True)
class DetRecord:
    t_ms: int
    frame: DetectionFrame


@dataclass(frozen=True)
class HandRecord:
    t_ms: int
    hand_index: int
    points: tuple[tuple[float, float, float], ...]


@dataclass(frozen=True)
class AngleRecord:
    t_ms: int
    angle: ObjAngle


@dataclass(frozen=True)
class HolesRecord:
    t_ms: int
    reports: tuple[HoleReport, ...]


@dataclass(frozen=True)
class AcfRecord:
    """Classifier-bypass record: a precomputed action-confidence vector."""

    t_ms: int
    acf: ActionConfidence


ReplayRecord = Union[MetaRecord, DetRecord, HandRecord, AngleRecord, HolesRecord, AcfRecord]


def _finite(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _record_t(raw: Mapping[str, Any], lineno: int) -> int:
    t = raw.get("t")
    if not isinstance(t, int) or isinstance(t, bool) or t < 0:
        raise ReplayFormatError(lineno, ReplayErrorReason.FIELD_RANGE, "t must be a nonnegative integer")
    return t


def _parse_record(raw: Mapping[str, Any], lineno: int) -> ReplayRecord:
    rtype = raw.get("type")
    try:
        if rtype == "meta":
            schema = raw.get("schema")
            if schema != REPLAY_SCHEMA_VERSION:
                raise ReplayFormatError(lineno, ReplayErrorReason.FIELD_RANGE, f"schema must be {REPLAY_SCHEMA_VERSION}")
            tick = raw.get("tick_ms")
            if not isinstance(tick, int) or tick <= 0:
                raise ReplayFormatError(lineno, ReplayErrorReason.FIELD_RANGE, "tick_ms must be a positive integer")
            return MetaRecord(plan_id=str(raw.get("plan_id", "")), tick_ms=tick, schema=schema)
        if rtype == "det":
            t = _record_t(raw, lineno)
            dets = []
            for d in raw.get("detections", ()):
                dets.append(
                    Detection(
                        part=PartClass.parse(d["part"]),
                        cx=d["cx"], cy=d["cy"], w=d["w"], h=d["h"], conf=d["conf"],
                        depth_mm=d.get("depth"),
                    )
                )
            return DetRecord(t_ms=t, frame=DetectionFrame(t_ms=t, detections=tuple(dets)))
        if rtype == "hand":
            t = _record_t(raw, lineno)
            hand = raw.get("hand", 0)
            if not isinstance(hand, int) or hand < 0:
                raise ReplayFormatError(lineno, ReplayErrorReason.FIELD_RANGE, "hand must be a nonnegative integer")
            points = raw.get("points")
            if not isinstance(points, list) or not points:
                raise ReplayFormatError(lineno, ReplayErrorReason.FIELD_RANGE, "points must be a nonempty list")
            parsed = []
            for p in points:
                if not isinstance(p, list) or len(p) != 3 or not all(_finite(v) for v in p):
                    raise ReplayFormatError(lineno, ReplayErrorReason.FIELD_RANGE, "each point is [x, y, z] finite")
                parsed.append((float(p[0]), float(p[1]), float(p[2])))
            return HandRecord(t_ms=t, hand_index=hand, points=tuple(parsed))
        if rtype == "angle":
            t = _record_t(raw, lineno)
            return AngleRecord(t_ms=t, angle=ObjAngle(t_ms=t, degrees=raw["deg"], conf=raw["conf"]))
        if rtype == "holes":
            t = _record_t(raw, lineno)
            reports = raw.get("reports")
            if not isinstance(reports, list):
                raise ReplayFormatError(lineno, ReplayErrorReason.FIELD_RANGE, "reports must be a list")
            return HolesRecord(t_ms=t, reports=tuple(_report_from_wire(r, t) for r in reports))
        if rtype == "acf":
            t = _record_t(raw, lineno)
            return AcfRecord(
                t_ms=t,
                acf=ActionConfidence(
                    t_ms=t,
                    catch_big=raw["catch_big"], catch_small=raw["catch_small"],
                    tightening=raw["tightening"], done=raw["done"],
                ),
            )
    except ReplayFormatError:
        raise
    except (ValidationError, ProtocolError, KeyError, TypeError) as e:
        raise ReplayFormatError(lineno, ReplayErrorReason.FIELD_RANGE, str(e)) from None
    raise ReplayFormatError(lineno, ReplayErrorReason.UNKNOWN_TYPE, f"type {rtype!r}")


def record_to_dict(record: ReplayRecord) -> dict[str, Any]:
    if isinstance(record, MetaRecord):
        return {"type": "meta", "plan_id": record.plan_id, "schema": record.schema, "tick_ms": record.tick_ms}
    if isinstance(record, DetRecord):
        dets = []
        for d in record.frame.detections:
            item: dict[str, Any] = {
                "part": d.part.value, "cx": d.cx, "cy": d.cy, "w": d.w, "h": d.h, "conf": d.conf,
            }
            if d.depth_mm is not None:
                item["depth"] = d.depth_mm
            dets.append(item)
        return {"type": "det", "t": record.t_ms, "detections": dets}
    if isinstance(record, HandRecord):
        return {
            "type": "hand", "t": record.t_ms, "hand": record.hand_index,
            "points": [[p[0], p[1], p[2]] for p in record.points],
        }
    if isinstance(record, AngleRecord):
        return {"type": "angle", "t": record.t_ms, "deg": record.angle.degrees, "conf": record.angle.conf}
    if isinstance(record, HolesRecord):
        return {"type": "holes", "t": record.t_ms, "reports": [_report_to_wire(r, record.t_ms) for r in record.reports]}
    if isinstance(record, AcfRecord):
        a = record.acf
        return {
            "type": "acf", "t": record.t_ms,
            "catch_big": a.catch_big, "catch_small": a.catch_small, "tightening": a.tightening, "done": a.done,
        }
    raise TypeError(f"not a replay record: {record!r}")


def read_replay(data: bytes | str) -> Iterator[ReplayRecord]:
    """Yield validated records in order; raises ReplayFormatError with the 1-based line."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    last_t = 0
    saw_meta = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as e:
            raise ReplayFormatError(lineno, ReplayErrorReason.NOT_JSON, str(e)) from None
        if not isinstance(raw, dict):
            raise ReplayFormatError(lineno, ReplayErrorReason.NOT_JSON, "record must be a JSON object")
        record = _parse_record(raw, lineno)
        if not saw_meta:
            if not isinstance(record, MetaRecord):
                raise ReplayFormatError(lineno, ReplayErrorReason.MISSING_META, "first record must be meta")
            saw_meta = True
        elif isinstance(record, MetaRecord):
            raise ReplayFormatError(lineno, ReplayErrorReason.FIELD_RANGE, "duplicate meta record")
        t = getattr(record, "t_ms", 0)
        if t < last_t:
            raise ReplayFormatError(lineno, ReplayErrorReason.TIMESTAMP_REGRESSION, f"{t} after {last_t}")
        last_t = max(last_t, t)
        yield record


def read_replay_file(path: str) -> list[ReplayRecord]:
    with open(path, "rb") as fh:
        return list(read_replay(fh.read()))


def write_replay(records: Iterable[ReplayRecord]) -> bytes:
    """Serialize records to canonical bytes; validates everything before emitting."""
    records = list(records)
    if not records or not isinstance(records[0], MetaRecord):
        raise InvariantViolation("first record must be meta")
    last_t = 0
    for i, record in enumerate(records):
        if i > 0 and isinstance(record, MetaRecord):
            raise InvariantViolation(f"record {i + 1}: duplicate meta")
        t = getattr(record, "t_ms", 0)
        if t < last_t:
            raise InvariantViolation(f"record {i + 1}: timestamp {t} regresses below {last_t}")
        last_t = max(last_t, t)
    return "".join(canonical_line(record_to_dict(r)) for r in records).encode("utf-8")


def write_replay_file(records: Iterable[ReplayRecord], path: str) -> int:
    data = write_replay(records)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)
