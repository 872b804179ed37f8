"""Reference-relative orientation estimation from image moments.

A part's 0-degree pose is calibrated once into a ReferenceDescriptor; later
observations are binarized, reduced to second/third central moments, and the
principal-axis angle (with skew-based 180-degree disambiguation) is reported
relative to the reference. A brute-force IoU search over integer angles
serves as the independent oracle.

The self-supervised sample generator and the loss contract are kept so a
learned regressor can sit behind the same interface.
"""

from __future__ import annotations

import base64
import json
import math
import re
from dataclasses import dataclass

import numpy as np

from .model import InvalidAngle, ObjAngle, canonicalize_angle, circ_diff

MIN_MASK_PIXELS = 16
ISOTROPY_EPSILON = 1e-3  # of total mask mass, applied to |mu20-mu02| and |mu11|
_SKEW_EPSILON = 1e-6


class EmptyMask(ValueError):
    """Binarized object mask is below the minimum size."""


class AmbiguousOrientation(ValueError):
    """Second moments are isotropic; the object has no usable principal axis."""


class GrayGrid:
    """Row-major grayscale grid with intensities in [0, 1]."""

    def __init__(self, pixels: np.ndarray):
        arr = np.asarray(pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError("pixels must be a nonempty 2-D array")
        if np.isnan(arr).any() or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("intensities must lie in [0, 1]")
        self.pixels = arr

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def data(self) -> np.ndarray:
        return self.pixels.reshape(-1)

    @classmethod
    def from_flat(cls, width: int, height: int, data) -> "GrayGrid":
        arr = np.asarray(data, dtype=np.float64)
        if arr.size != width * height:
            raise ValueError(f"expected {width * height} values, got {arr.size}")
        return cls(arr.reshape(height, width))

    def __eq__(self, other) -> bool:
        return isinstance(other, GrayGrid) and np.array_equal(self.pixels, other.pixels)


@dataclass
class RotatedSample:
    image: GrayGrid
    label_deg: float


@dataclass
class ReferenceDescriptor:
    """Calibrated 0-degree pose: principal angle, skew sign, and the raw mask."""

    theta_ref_deg: float
    skew_sign: int
    mask: np.ndarray  # bool, (h, w)
    meta: str = ""

    def __post_init__(self) -> None:
        self._rotated_masks: list[np.ndarray] | None = None

    def rotated_masks(self) -> list[np.ndarray]:
        """All 360 integer rotations of the mask, cached for the IoU oracle."""
        if self._rotated_masks is None:
            self._rotated_masks = [_rotate_mask_nn(self.mask, t) for t in range(360)]
        return self._rotated_masks


def _source_coords(shape: tuple[int, int], theta_deg: float) -> tuple[np.ndarray, np.ndarray]:
    # Inverse mapping: content at angle phi (atan2 over row/col offsets from
    # the grid center) moves to phi + theta.
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = rr - cy, cc - cx
    th = math.radians(theta_deg)
    cos_t, sin_t = math.cos(th), math.sin(th)
    sx = cos_t * dx + sin_t * dy + cx
    sy = -sin_t * dx + cos_t * dy + cy
    return sx, sy


def rotate_grid(img: GrayGrid, theta_deg: float, mode: str = "bilinear") -> GrayGrid:
    """Rotate about the grid center by theta degrees; out-of-bounds samples are 0."""
    if not isinstance(theta_deg, (int, float)) or not math.isfinite(theta_deg):
        raise InvalidAngle(f"rotation angle must be finite, got {theta_deg!r}")
    src = img.pixels
    h, w = src.shape
    sx, sy = _source_coords((h, w), theta_deg)

    if mode == "nearest":
        xi, yi = np.rint(sx).astype(np.int64), np.rint(sy).astype(np.int64)
        inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        out = np.zeros_like(src)
        out[inside] = src[yi[inside], xi[inside]]
        return GrayGrid(out)
    if mode != "bilinear":
        raise ValueError(f"unknown interpolation mode {mode!r}")

    x0, y0 = np.floor(sx).astype(np.int64), np.floor(sy).astype(np.int64)
    fx, fy = sx - x0, sy - y0
    out = np.zeros_like(src)
    for ox, oy, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xi, yi = x0 + ox, y0 + oy
        inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        vals = np.zeros_like(src)
        vals[inside] = src[yi[inside], xi[inside]]
        out += wgt * vals
    return GrayGrid(np.clip(out, 0.0, 1.0))


def _rotate_mask_nn(mask: np.ndarray, theta_deg: float) -> np.ndarray:
    return rotate_grid(GrayGrid(mask.astype(np.float64)), theta_deg, mode="nearest").pixels >= 0.5


def binarize(img: GrayGrid, threshold: float) -> np.ndarray:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return img.pixels >= threshold


def _principal_angle(mask: np.ndarray) -> tuple[float, float]:
    """Principal-axis angle in [0, 360) with skew disambiguation, plus anisotropy.

    Returns (theta_deg, anisotropy) where anisotropy is (l1-l2)/(l1+l2) of the
    second-moment matrix eigenvalues, 0 for isotropic masks and approaching 1
    for line-like ones.
    """
    ys, xs = np.nonzero(mask)
    m00 = xs.size
    if m00 < MIN_MASK_PIXELS:
        raise EmptyMask(f"mask has {m00} pixels, need >= {MIN_MASK_PIXELS}")
    x = xs.astype(np.float64)
    y = ys.astype(np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    mu20 = float(np.dot(dx, dx))
    mu02 = float(np.dot(dy, dy))
    mu11 = float(np.dot(dx, dy))
    if abs(mu20 - mu02) < ISOTROPY_EPSILON * m00 and abs(mu11) < ISOTROPY_EPSILON * m00:
        raise AmbiguousOrientation("second moments are isotropic")

    theta = 0.5 * math.atan2(2.0 * mu11, mu20 - mu02)
    ux, uy = math.cos(theta), math.sin(theta)
    proj = dx * ux + dy * uy
    skew = float(np.sum(proj**3))
    rms = math.sqrt((mu20 + mu02) / m00)
    if skew < 0 and abs(skew) > _SKEW_EPSILON * m00 * rms**3:
        theta += math.pi
    aniso = math.hypot(mu20 - mu02, 2.0 * mu11) / (mu20 + mu02)
    return canonicalize_angle(math.degrees(theta)), min(1.0, aniso)


def make_reference(img: GrayGrid, bin_threshold: float = 0.5, meta: str = "") -> ReferenceDescriptor:
    """Calibrate an image as the 0-degree pose of its object."""
    mask = binarize(img, bin_threshold)
    theta, _ = _principal_angle(mask)
    ys, xs = np.nonzero(mask)
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    th = math.radians(theta)
    skew = float(np.sum((dx * math.cos(th) + dy * math.sin(th)) ** 3))
    return ReferenceDescriptor(
        theta_ref_deg=theta,
        skew_sign=1 if skew >= 0 else -1,
        mask=mask,
        meta=meta,
    )


def estimate_angle(
    img: GrayGrid, ref: ReferenceDescriptor, bin_threshold: float = 0.5, t_ms: int = 0
) -> ObjAngle:
    """Orientation of the observed object relative to the reference pose."""
    theta_obs, aniso = _principal_angle(binarize(img, bin_threshold))
    return ObjAngle(
        t_ms=t_ms,
        degrees=canonicalize_angle(theta_obs - ref.theta_ref_deg),
        conf=aniso,
    )


def gen_rotated_sample(img: GrayGrid, rng: np.random.Generator) -> RotatedSample:
    """Draw a uniform rotation in [0, 360) and return the rotated image with its label."""
    label = float(rng.uniform(0.0, 360.0))
    return RotatedSample(image=rotate_grid(img, label), label_deg=label)


def angle_loss(x: float, y: float, mode: str = "circular") -> float:
    """Regression loss between a true angle x and a predicted angle y.

    "literal" is plain |x - y|; "circular" folds the 0/360 wrap and is the
    default because the literal form misbehaves at the boundary.
    """
    if mode == "literal":
        if not math.isfinite(x) or not math.isfinite(y):
            raise InvalidAngle("angles must be finite")
        return abs(x - y)
    if mode == "circular":
        return circ_diff(x, y)
    raise ValueError(f"unknown loss mode {mode!r}")


def oracle_angle(img: GrayGrid, ref: ReferenceDescriptor, bin_threshold: float = 0.5) -> int:
    """Brute-force rotation search: argmax over integer degrees of mask IoU.

    Independent of the moment pipeline; ties break toward the smaller angle.
    """
    obs = binarize(img, bin_threshold)
    if int(obs.sum()) < MIN_MASK_PIXELS:
        raise EmptyMask("observation mask below minimum size")
    best_theta, best_iou = 0, -1.0
    for theta, rot in enumerate(ref.rotated_masks()):
        inter = int(np.count_nonzero(rot & obs))
        union = int(np.count_nonzero(rot | obs))
        iou = inter / union if union else 0.0
        if iou > best_iou:
            best_theta, best_iou = theta, iou
    return best_theta


# --- persistence -------------------------------------------------------------

def reference_to_json(ref: ReferenceDescriptor) -> str:
    h, w = ref.mask.shape
    packed = np.packbits(ref.mask.reshape(-1))
    return json.dumps(
        {
            "version": 1,
            "theta_ref_deg": ref.theta_ref_deg,
            "skew_sign": ref.skew_sign,
            "meta": ref.meta,
            "mask": {
                "width": w,
                "height": h,
                "bits_b64": base64.b64encode(packed.tobytes()).decode("ascii"),
            },
        },
        indent=2,
        sort_keys=True,
    )


def reference_from_json(text: str) -> ReferenceDescriptor:
    raw = json.loads(text)
    if raw.get("version") != 1:
        raise ValueError(f"unsupported reference version {raw.get('version')!r}")
    m = raw["mask"]
    w, h = int(m["width"]), int(m["height"])
    packed = np.frombuffer(base64.b64decode(m["bits_b64"]), dtype=np.uint8)
    bits = np.unpackbits(packed)[: w * h].astype(bool).reshape(h, w)
    return ReferenceDescriptor(
        theta_ref_deg=float(raw["theta_ref_deg"]),
        skew_sign=int(raw["skew_sign"]),
        mask=bits,
        meta=str(raw.get("meta", "")),
    )


def read_pgm(path: str) -> GrayGrid:
    """Load a binary (P5) 8-bit PGM, mapping intensities to [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header = []
    pos = 0
    while len(header) < 4:
        match = re.match(rb"\s*(?:#[^\n]*\n\s*)*(\S+)", blob[pos:])
        if not match:
            raise ValueError(f"{path}: truncated PGM header")
        header.append(match.group(1))
        pos += match.end()
    if header[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = int(header[1]), int(header[2]), int(header[3])
    if maxval != 255:
        raise ValueError(f"{path}: expected 8-bit PGM (maxval 255), got {maxval}")
    pixels = np.frombuffer(blob[pos + 1 : pos + 1 + width * height], dtype=np.uint8)
    if pixels.size != width * height:
        raise ValueError(f"{path}: pixel data truncated")
    return GrayGrid(pixels.reshape(height, width).astype(np.float64) / 255.0)


def write_pgm(img: GrayGrid, path: str) -> None:
    data = np.rint(img.pixels * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
