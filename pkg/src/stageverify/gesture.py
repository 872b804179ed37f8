"""Hand-keypoint normalization, 30-frame gesture windows, and window classification.

Keypoints follow the conventional 21-landmark hand layout: wrist at index 0,
fingertips at 4 (thumb), 8 (index), 12 (middle), 16 (ring), 20 (pinky), and
finger bases at 5, 9, 13, 17. The window classifier is pluggable; the bundled
reference implementation matches windows against stored templates by cosine
similarity. A deterministic fingertip heuristic backs the "Done" gesture.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .model import ActionConfidence, ActionLabel

WINDOW_FRAMES = 30

WRIST = 0
THUMB_TIP, INDEX_TIP, MIDDLE_TIP, RING_TIP, PINKY_TIP = 4, 8, 12, 16, 20
FINGER_BASES = (5, 9, 13, 17)

# wrist + five fingertips + four finger bases: 10 keypoints x (x, y, z, t) = 40
DEFAULT_SUBSET = (WRIST, THUMB_TIP, INDEX_TIP, MIDDLE_TIP, RING_TIP, PINKY_TIP) + FINGER_BASES


class DegenerateHand(ValueError):
    """All keypoints coincide; the normalization scale is undefined."""


class FeatureLengthMismatch(ValueError):
    """Frame keypoint count differs from the session configuration."""


class NotReady(RuntimeError):
    """The window does not hold a full 30 frames yet."""


class NoTemplates(ValueError):
    """The reference classifier has an empty template set."""


@dataclass(frozen=True)
class GestureConfig:
    keypoint_count: int = 21
    subset: tuple[int, ...] = DEFAULT_SUBSET
    d_pinch: float = 0.15
    d_extend: float = 0.6
    window_frames: int = WINDOW_FRAMES

    @property
    def features_per_frame(self) -> int:
        return len(self.subset) * 4

    @property
    def window_features(self) -> int:
        return self.window_frames * self.features_per_frame


@dataclass(frozen=True)
class HandFrame:
    """One timestamped set of hand keypoints, camera-normalized (x, y, z)."""

    t_ms: int
    points: tuple[tuple[float, float, float], ...]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64)


def normalize_hand(frame: HandFrame) -> HandFrame:
    """Translate the wrist to the origin and scale the farthest keypoint to 1.

    The same uniform factor applies to x, y, and z, so the result is invariant
    to where the hand sits in the image and how large it appears.
    """
    pts = frame.as_array()
    pts = pts - pts[WRIST]
    span = float(np.linalg.norm(pts, axis=1).max())
    if span <= 0.0 or not math.isfinite(span):
        raise DegenerateHand("all keypoints coincide")
    pts = pts / span
    return HandFrame(t_ms=frame.t_ms, points=tuple(map(tuple, pts)))


def done_heuristic(frame: HandFrame, cfg: GestureConfig = GestureConfig()) -> tuple[bool, float]:
    """Pinch check on a normalized frame: thumb and index tips together while
    the remaining fingertips stay extended away from the wrist."""
    pts = frame.as_array()
    pinch = float(np.linalg.norm(pts[THUMB_TIP] - pts[INDEX_TIP]))
    extended = all(
        float(np.linalg.norm(pts[tip] - pts[WRIST])) > cfg.d_extend
        for tip in (MIDDLE_TIP, RING_TIP, PINKY_TIP)
    )
    is_done = pinch < cfg.d_pinch and extended
    conf = max(0.0, 1.0 - pinch / cfg.d_pinch) if is_done else 0.0
    return is_done, conf


class GestureWindow:
    """Ring buffer of the most recent frames for one hand.

    Feature vectors rebase each frame time to the window start and scale the
    span to [0, 1], so the flattened window depends only on relative timing.
    """

    def __init__(self, cfg: GestureConfig = GestureConfig()):
        self.cfg = cfg
        self._times: list[int] = []
        self._coords: list[np.ndarray] = []
        self.last_done_conf = 0.0

    @property
    def ready(self) -> bool:
        return len(self._times) >= self.cfg.window_frames

    def push(self, frame: HandFrame) -> bool:
        """Append one normalized frame; returns the readiness flag."""
        if len(frame.points) != self.cfg.keypoint_count:
            raise FeatureLengthMismatch(
                f"frame has {len(frame.points)} keypoints, session expects {self.cfg.keypoint_count}"
            )
        pts = frame.as_array()
        self._times.append(frame.t_ms)
        self._coords.append(pts[list(self.cfg.subset)])
        if len(self._times) > self.cfg.window_frames:
            self._times.pop(0)
            self._coords.pop(0)
        _, self.last_done_conf = done_heuristic(frame, self.cfg)
        return self.ready

    def features(self) -> np.ndarray:
        """Flattened window: frames x keypoints x (x, y, z, t), length 1200 by default."""
        if not self.ready:
            raise NotReady("window needs a full frame buffer")
        t = np.asarray(self._times, dtype=np.float64)
        span = t[-1] - t[0]
        t_scaled = (t - t[0]) / span if span > 0 else np.zeros_like(t)
        rows = []
        for coords, ts in zip(self._coords, t_scaled):
            ts_col = np.full((coords.shape[0], 1), ts)
            rows.append(np.hstack([coords, ts_col]).reshape(-1))
        return np.concatenate(rows)

    @property
    def last_t_ms(self) -> int:
        if not self._times:
            raise NotReady("no frames pushed")
        return self._times[-1]


@dataclass(frozen=True)
class GestureTemplate:
    label: ActionLabel
    features: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))


class WindowClassifier(Protocol):
    def scores(self, features: np.ndarray) -> Mapping[ActionLabel, float]: ...


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


class NearestTemplateClassifier:
    """Per-label nearest template by cosine similarity, mapped to [0, 1] via (sim+1)/2.

    Deterministic and trainable from a handful of recorded windows; labels with
    no template score 0.
    """

    def __init__(self, templates: Sequence[GestureTemplate]):
        self.templates = tuple(templates)

    def scores(self, features: np.ndarray) -> dict[ActionLabel, float]:
        if not self.templates:
            raise NoTemplates("classifier has no templates")
        out = {label: 0.0 for label in ActionLabel}
        for tmpl in self.templates:
            sim = _cosine(features, tmpl.features)
            out[tmpl.label] = max(out[tmpl.label], (sim + 1.0) / 2.0)
        return out


def classify_window(window: GestureWindow, classifier: WindowClassifier) -> ActionConfidence:
    """Score a ready window; the done component also honors the fingertip heuristic."""
    scores = classifier.scores(window.features())
    return ActionConfidence(
        t_ms=window.last_t_ms,
        catch_big=scores[ActionLabel.CATCH_BIG],
        catch_small=scores[ActionLabel.CATCH_SMALL],
        tightening=scores[ActionLabel.TIGHTENING],
        done=max(scores[ActionLabel.DONE], window.last_done_conf),
    )


# --- template persistence -----------------------------------------------------

def save_templates(templates: Iterable[GestureTemplate], path: str) -> None:
    payload = [
        {"label": t.label.value, "features": [round(float(v), 9) for v in t.features]}
        for t in templates
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_templates(path: str) -> list[GestureTemplate]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return [
        GestureTemplate(ActionLabel.parse(item["label"]), np.asarray(item["features"], dtype=np.float64))
        for item in payload
    ]


# --- synthetic static poses ----------------------------------------------------
# Local hand coordinates relative to the wrist, used by the bundled template
# set and the scenario simulator. The poses are stylized, not anatomical: each
# action occupies its own spatial sector with alternating finger lift so the
# cosine classifier sees well-separated windows (cross-action confidence stays
# clear of the default tau_act).

def _finger(angle_deg: float, radii: Sequence[float], zs: Sequence[float]) -> list[tuple[float, float, float]]:
    a = math.radians(angle_deg)
    return [(r * math.cos(a), r * math.sin(a), z) for r, z in zip(radii, zs)]


def _sector_pt(angle_deg: float, r: float, z: float) -> tuple[float, float, float]:
    a = math.radians(angle_deg)
    return (r * math.cos(a), r * math.sin(a), z)


def _fan_pose(center: float, spread: float, radii: Sequence[float], z_tips: Sequence[float],
              tip_override: Sequence[tuple[int, tuple[float, float, float]]] = ()) -> tuple:
    chains = []
    for k, z_tip in zip((-2, -1, 0, 1, 2), z_tips):
        zs = [0.0, z_tip * 0.4, z_tip * 0.75, z_tip]
        chains.append(_finger(center + k * spread, radii, zs))
    for fi, pt in tip_override:
        chains[fi][3] = pt
    pts = [(0.0, 0.0, 0.0)]
    for chain in chains:
        pts.extend(chain)
    return tuple(pts)


_EXT = [0.45, 0.65, 0.85, 1.00]
_GRIP = [0.45, 0.62, 0.74, 0.82]
_TUCK = [0.42, 0.44, 0.36, 0.28]

NEUTRAL_POSE = _fan_pose(0, 12, _EXT, [0.30, -0.30, 0.30, -0.30, 0.30])

_CATCH_BIG_POSE = _fan_pose(90, 12, _GRIP, [-0.30, 0.30, -0.30, 0.30, -0.30])

_TIGHTENING_POSE = _fan_pose(180, 12, _GRIP, [0.30, -0.30, 0.30, -0.30, 0.30])

_CATCH_SMALL_POSE = _fan_pose(
    270, 12, _TUCK, [-0.10, -0.10, -0.10, -0.10, -0.10],
    tip_override=[(0, _sector_pt(270, 0.80, -0.30)), (1, _sector_pt(275, 0.82, -0.30))],
)

_DONE_POSE = _fan_pose(
    135, 14, _EXT, [0.10, 0.10, 0.0, 0.0, 0.0],
    tip_override=[(0, _sector_pt(131, 0.56, 0.08)), (1, _sector_pt(136, 0.58, 0.08))],
)

ACTION_POSES: Mapping[ActionLabel, tuple[tuple[float, float, float], ...]] = {
    ActionLabel.CATCH_BIG: _CATCH_BIG_POSE,
    ActionLabel.CATCH_SMALL: _CATCH_SMALL_POSE,
    ActionLabel.TIGHTENING: _TIGHTENING_POSE,
    ActionLabel.DONE: _DONE_POSE,
}


def pose_window_features(
    pose: tuple[tuple[float, float, float], ...],
    cfg: GestureConfig = GestureConfig(),
    frame_ms: int = 33,
) -> np.ndarray:
    """Feature vector of a window holding one static pose for every frame."""
    window = GestureWindow(cfg)
    for i in range(cfg.window_frames):
        window.push(normalize_hand(HandFrame(t_ms=i * frame_ms, points=pose)))
    return window.features()


def build_default_templates(cfg: GestureConfig = GestureConfig()) -> list[GestureTemplate]:
    """One template per action, recorded from the bundled static poses."""
    return [
        GestureTemplate(label, pose_window_features(pose, cfg))
        for label, pose in ACTION_POSES.items()
    ]
