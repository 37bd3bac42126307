"""Landmarks, perturbation sampling, affine transforms, and image warping.

Coordinate conventions
----------------------
Landmarks live in continuous image coordinates where pixel ``(ix, iy)``
covers the unit square ``[ix, ix+1) x [iy, iy+1)`` and is centered at
``(ix + 0.5, iy + 0.5)``. Points may fall outside the frame rectangle;
nothing here assumes containment.

The 68-point layout follows the iBUG convention. Only the four facial
regions used for blending are indexed:

==========  ============
region      point indices
==========  ============
eyebrows    17-26
nose        27-35
eyes        36-47
mouth       48-67
==========  ============
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateTransformError, LandmarkFormatError

LANDMARK_COUNT = 68

REGION_SLICES: dict[str, slice] = {
    "eyebrows": slice(17, 27),
    "nose": slice(27, 36),
    "eyes": slice(36, 48),
    "mouth": slice(48, 68),
}

# Fixed iteration order for everything that samples or records per-region
# state; determinism depends on never reordering this tuple.
REGION_ORDER: tuple[str, ...] = ("eyebrows", "nose", "eyes", "mouth")


@dataclass(frozen=True)
class LandmarkSet:
    """Ordered 68-point landmark set for one frame.

    Parameters
    ----------
    points : ndarray, shape (68, 2), float64
        ``points[i] = (x, y)`` in continuous pixel coordinates.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (LANDMARK_COUNT, 2):
            raise LandmarkFormatError(
                f"expected {LANDMARK_COUNT} (x, y) landmarks, got array of shape {pts.shape}"
            )
        if not np.isfinite(pts).all():
            raise LandmarkFormatError("landmark coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def region_points(self, region: str) -> np.ndarray:
        """Points of one facial region, in landmark order."""
        try:
            return self.points[REGION_SLICES[region]]
        except KeyError:
            raise KeyError(f"unknown region {region!r}; expected one of {REGION_ORDER}") from None

    def centroid(self, region: str | None = None) -> tuple[float, float]:
        """Centroid of a region's points, or of all 68 points."""
        pts = self.points if region is None else self.region_points(region)
        cx, cy = pts.mean(axis=0)
        return float(cx), float(cy)

    def bbox_diagonal(self) -> float:
        """Diagonal length of the axis-aligned bounding box of all points."""
        span = self.points.max(axis=0) - self.points.min(axis=0)
        return float(math.hypot(span[0], span[1]))


@dataclass(frozen=True)
class PerturbationBounds:
    """Upper bounds for the sampled perturbation magnitudes.

    ``u_r`` caps |rotation| in radians, ``u_s`` caps |scale - 1|, and
    ``u_t`` caps the translation magnitude in pixels.
    """

    u_r: float
    u_s: float
    u_t: float

    def __post_init__(self):
        if not (self.u_r >= 0 and self.u_s >= 0 and self.u_t >= 0):
            raise ValueError("perturbation bounds must be non-negative")
        if self.u_s >= 1:
            raise ValueError("scale bound must be < 1 so sampled scales stay positive")
        if not all(map(math.isfinite, (self.u_r, self.u_s, self.u_t))):
            raise ValueError("perturbation bounds must be finite")


@dataclass(frozen=True)
class PerturbationParams:
    """One sampled perturbation: rotate and scale about ``pivot``, then translate."""

    rotation: float
    scale: float
    translation: tuple[float, float]
    pivot: tuple[float, float]

    def is_identity(self) -> bool:
        return self.rotation == 0.0 and self.scale == 1.0 and self.translation == (0.0, 0.0)

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation,
            "scale": self.scale,
            "translation": list(self.translation),
            "pivot": list(self.pivot),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationParams":
        return cls(
            rotation=float(d["rotation"]),
            scale=float(d["scale"]),
            translation=(float(d["translation"][0]), float(d["translation"][1])),
            pivot=(float(d["pivot"][0]), float(d["pivot"][1])),
        )

    @classmethod
    def identity(cls, pivot: tuple[float, float] = (0.0, 0.0)) -> "PerturbationParams":
        return cls(rotation=0.0, scale=1.0, translation=(0.0, 0.0), pivot=pivot)


@dataclass(frozen=True)
class AffineTransform:
    """2x3 affine transform mapping column points ``p -> m[:, :2] @ p + m[:, 2]``."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (2, 3):
            raise ValueError(f"affine matrix must have shape (2, 3), got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an (N, 2) array of points; also accepts a single (2,) point."""
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        out = np.atleast_2d(pts) @ self.m[:, :2].T + self.m[:, 2]
        return out[0] if single else out

    def det(self) -> float:
        return float(self.m[0, 0] * self.m[1, 1] - self.m[0, 1] * self.m[1, 0])

    def inverse(self) -> "AffineTransform":
        d = self.det()
        if abs(d) < 1e-12:
            raise DegenerateTransformError(f"affine transform is singular (det={d!r})")
        a, b, tx = self.m[0]
        c, e, ty = self.m[1]
        inv_lin = np.array([[e, -b], [-c, a]]) / d
        inv_t = -inv_lin @ np.array([tx, ty])
        return AffineTransform(np.column_stack([inv_lin, inv_t]))


def sample_perturbation(
    bounds: PerturbationBounds,
    pivot: tuple[float, float],
    rng: np.random.Generator,
) -> PerturbationParams:
    """Sample perturbation parameters from the given bounds.

    Magnitudes are drawn from ``U[0, u_i]``. A one-sided draw would push
    every frame in the same direction instead of making features flicker
    around their rest position, so signs and directions are sampled too:
    the rotation sign and the scale sign are uniform over {-1, +1} and the
    translation direction is a uniform angle. Draw order (fixed for
    reproducibility): rotation magnitude, rotation sign, scale magnitude,
    scale sign, translation magnitude, translation angle.
    """
    if not (math.isfinite(pivot[0]) and math.isfinite(pivot[1])):
        raise ValueError("pivot must be finite")
    rot_mag = rng.uniform(0.0, bounds.u_r)
    rot_sign = 1.0 if rng.integers(0, 2) == 0 else -1.0
    scale_mag = rng.uniform(0.0, bounds.u_s)
    scale_sign = 1.0 if rng.integers(0, 2) == 0 else -1.0
    t_mag = rng.uniform(0.0, bounds.u_t)
    t_angle = rng.uniform(0.0, 2.0 * math.pi)
    return PerturbationParams(
        rotation=rot_sign * rot_mag,
        scale=1.0 + scale_sign * scale_mag,
        translation=(t_mag * math.cos(t_angle), t_mag * math.sin(t_angle)),
        pivot=(float(pivot[0]), float(pivot[1])),
    )


def build_affine(params: PerturbationParams) -> AffineTransform:
    """Build the matrix for rotate-and-scale about the pivot, then translate.

    ``p' = pivot + scale * R(rotation) @ (p - pivot) + translation``
    """
    c = math.cos(params.rotation) * params.scale
    s = math.sin(params.rotation) * params.scale
    px, py = params.pivot
    dx, dy = params.translation
    tx = px - (c * px - s * py) + dx
    ty = py - (s * px + c * py) + dy
    return AffineTransform(np.array([[c, -s, tx], [s, c, ty]]))


def transform_landmarks(landmarks, transform: AffineTransform):
    """Map a ``LandmarkSet`` or an (N, 2) point array through ``transform``.

    Returns the same kind of object it was given; point order is preserved.
    """
    if isinstance(landmarks, LandmarkSet):
        return LandmarkSet(transform.apply(landmarks.points))
    return transform.apply(landmarks)


def warp_pixels(pixels: np.ndarray, transform: AffineTransform) -> np.ndarray:
    """Warp an (H, W) or (H, W, C) raster by ``transform``, in float.

    Each output pixel center is pulled back through the inverse transform
    and sampled from the source with bilinear interpolation; source
    coordinates outside the frame clamp to the nearest edge pixel, which
    avoids injecting dark borders the blending step would then imprint.

    Returns float64 regardless of input dtype. Raises
    :class:`DegenerateTransformError` for singular transforms.
    """
    src = np.asarray(pixels, dtype=np.float64)
    if src.ndim not in (2, 3) or src.shape[0] < 1 or src.shape[1] < 1:
        raise ValueError(f"expected a non-empty (H, W[, C]) raster, got shape {src.shape}")
    inv = transform.inverse().m
    h, w = src.shape[:2]

    # Pixel-center pullback: sample coordinates in index space.
    xs = np.arange(w, dtype=np.float64) + 0.5
    ys = np.arange(h, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    sx = inv[0, 0] * gx + inv[0, 1] * gy + inv[0, 2] - 0.5
    sy = inv[1, 0] * gx + inv[1, 1] * gy + inv[1, 2] - 0.5

    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    if src.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]

    top = src[y0, x0] * (1.0 - fx) + src[y0, x1] * fx
    bottom = src[y1, x0] * (1.0 - fx) + src[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def warp_image(pixels: np.ndarray, transform: AffineTransform) -> np.ndarray:
    """Warp an 8-bit image, returning an 8-bit image of the same shape."""
    out = warp_pixels(pixels, transform)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def parse_landmarks_json(text: str) -> list[LandmarkSet]:
    """Parse the landmarks file schema.

    Schema: ``{"frames": [{"index": int, "landmarks": [[x, y] * 68]}]}``
    where indices are contiguous from 0. Records may appear in any order;
    the returned list is ordered by index.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LandmarkFormatError(f"landmarks file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "frames" not in doc:
        raise LandmarkFormatError('landmarks file must be an object with a "frames" key')
    entries = doc["frames"]
    if not isinstance(entries, list) or not entries:
        raise LandmarkFormatError('"frames" must be a non-empty list')
    by_index: dict[int, LandmarkSet] = {}
    for entry in entries:
        try:
            idx = int(entry["index"])
            lm = LandmarkSet(np.asarray(entry["landmarks"], dtype=np.float64))
        except (KeyError, TypeError, ValueError) as exc:
            raise LandmarkFormatError(f"malformed landmarks entry: {exc}") from exc
        if idx in by_index:
            raise LandmarkFormatError(f"duplicate landmarks entry for index {idx}")
        by_index[idx] = lm
    for i in range(len(by_index)):
        if i not in by_index:
            raise LandmarkFormatError(f"landmark indices must be contiguous from 0; missing {i}")
    return [by_index[i] for i in range(len(by_index))]


def load_landmarks_file(path: str | Path) -> list[LandmarkSet]:
    """Read and parse a landmarks JSON file."""
    return parse_landmarks_json(Path(path).read_text(encoding="utf-8"))


def dump_landmarks_json(landmark_sets: list[LandmarkSet]) -> str:
    """Serialize landmark sets to the landmarks file schema."""
    frames = [
        {"index": i, "landmarks": lm.points.tolist()} for i, lm in enumerate(landmark_sets)
    ]
    return json.dumps({"frames": frames})
