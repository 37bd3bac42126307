"""Soft region masks from landmarks.

A region's mask value at a pixel is ``1 - clip(dist / fdist, 0, 1)`` where
``dist`` is a signed distance that is negative inside the region and grows
positive outside it, and ``fdist`` is the fall-off radius. The mask is
therefore exactly 1 on the whole region interior, decays linearly across
a band of width ``fdist`` outside the boundary, and is exactly 0 beyond.

Two distance semantics are supported:

``hull`` (default)
    Signed distance to the boundary of the convex hull of the region's
    landmarks. This treats the organ as a solid patch, so the mask covers
    its full interior.
``points``
    Plain distance to the nearest landmark point (never negative). Kept as
    an ablation switch; it carves holes between landmarks and is not used
    by default.

Masks are evaluated in continuous coordinates at pixel centers
``(ix + 0.5, iy + 0.5)`` to avoid a half-pixel bias against the landmark
coordinate convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import DegenerateRegionError
from .geometry import REGION_ORDER, LandmarkSet

DISTANCE_MODES = ("hull", "points")

# Face-bbox-diagonal fraction used when no explicit fall-off is configured.
DEFAULT_FALLOFF_FRACTION = 0.1


@dataclass(frozen=True)
class FalloffConfig:
    """Per-region fall-off distances plus the distance semantics switch.

    ``fdist`` maps region names to fall-off radii in pixels; the ``face``
    key is used for whole-face-hull masks. All values must be positive and
    finite.
    """

    fdist: Mapping[str, float]
    distance_mode: str = "hull"

    def __post_init__(self):
        for region, value in self.fdist.items():
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"fall-off distance for {region!r} must be positive, got {value}")
        if self.distance_mode not in DISTANCE_MODES:
            raise ValueError(
                f"distance_mode must be one of {DISTANCE_MODES}, got {self.distance_mode!r}"
            )
        object.__setattr__(self, "fdist", dict(self.fdist))

    def for_region(self, region: str) -> float:
        try:
            return self.fdist[region]
        except KeyError:
            raise KeyError(f"no fall-off distance configured for region {region!r}") from None

    @classmethod
    def uniform(cls, fdist: float, distance_mode: str = "hull") -> "FalloffConfig":
        regions = dict.fromkeys(REGION_ORDER, fdist)
        regions["face"] = fdist
        return cls(fdist=regions, distance_mode=distance_mode)


@dataclass(frozen=True)
class RegionMask:
    """Per-pixel blending weights in [0, 1] for one region."""

    weights: np.ndarray
    region: str = field(default="")

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError(f"mask weights must be a 2-D grid, got shape {w.shape}")
        if w.size and (w.min() < 0.0 or w.max() > 1.0):
            raise ValueError("mask weights must lie in [0, 1]")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def to_grayscale(self) -> np.ndarray:
        """8-bit rendering, value = round(255 * weight)."""
        return np.rint(self.weights * 255.0).astype(np.uint8)


def clip(x: float, lo: float, hi: float) -> float:
    """Limit ``x`` to the range [lo, hi]."""
    if lo > hi:
        raise ValueError(f"clip bounds are inverted: lo={lo} > hi={hi}")
    return min(max(x, lo), hi)


def _hull_vertices(region_points: np.ndarray) -> np.ndarray:
    """Convex hull vertices in counterclockwise order.

    Raises :class:`DegenerateRegionError` when the points do not span an
    area (fewer than 3 points, or all collinear).
    """
    pts = np.asarray(region_points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"region points must be an (N, 2) array, got shape {pts.shape}")
    if pts.shape[0] < 3:
        raise DegenerateRegionError(
            f"region needs at least 3 points to form an area, got {pts.shape[0]}"
        )
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateRegionError(f"region points are degenerate (collinear?): {exc}") from exc
    return pts[hull.vertices]


def _segment_distances(px: np.ndarray, py: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Min distance from each query point to the polygon boundary segments."""
    a = vertices
    b = np.roll(vertices, -1, axis=0)
    ab = b - a
    seg_len_sq = np.einsum("ij,ij->i", ab, ab)
    # Guard zero-length edges (repeated hull vertices cannot occur, but stay safe).
    seg_len_sq = np.where(seg_len_sq == 0.0, 1.0, seg_len_sq)

    qx = px[..., None] - a[:, 0]
    qy = py[..., None] - a[:, 1]
    t = np.clip((qx * ab[:, 0] + qy * ab[:, 1]) / seg_len_sq, 0.0, 1.0)
    dx = qx - t * ab[:, 0]
    dy = qy - t * ab[:, 1]
    return np.sqrt(dx * dx + dy * dy).min(axis=-1)


def _inside_hull(px: np.ndarray, py: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Boolean inside-or-on-boundary test for a CCW convex polygon."""
    a = vertices
    b = np.roll(vertices, -1, axis=0)
    ab = b - a
    cross = ab[:, 0] * (py[..., None] - a[:, 1]) - ab[:, 1] * (px[..., None] - a[:, 0])
    return (cross >= 0.0).all(axis=-1)


def signed_distance(point, region_points: np.ndarray) -> float:
    """Signed distance from a point to the region's convex-hull boundary.

    Negative inside the hull, positive outside, zero on the boundary.
    """
    vertices = _hull_vertices(region_points)
    px = np.asarray([float(point[0])])
    py = np.asarray([float(point[1])])
    d = _segment_distances(px, py, vertices)[0]
    return float(-d if _inside_hull(px, py, vertices)[0] else d)


def signed_distance_grid(shape: tuple[int, int], region_points: np.ndarray) -> np.ndarray:
    """Signed hull distance sampled at every pixel center of an (H, W) grid."""
    h, w = shape
    vertices = _hull_vertices(region_points)
    px, py = np.meshgrid(
        np.arange(w, dtype=np.float64) + 0.5, np.arange(h, dtype=np.float64) + 0.5
    )
    d = _segment_distances(px, py, vertices)
    return np.where(_inside_hull(px, py, vertices), -d, d)


def point_set_distance_grid(shape: tuple[int, int], region_points: np.ndarray) -> np.ndarray:
    """Distance to the nearest landmark, sampled at pixel centers (ablation mode)."""
    h, w = shape
    pts = np.asarray(region_points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
        raise DegenerateRegionError("point-set distance needs at least one landmark")
    px, py = np.meshgrid(
        np.arange(w, dtype=np.float64) + 0.5, np.arange(h, dtype=np.float64) + 0.5
    )
    dx = px[..., None] - pts[:, 0]
    dy = py[..., None] - pts[:, 1]
    return np.sqrt(dx * dx + dy * dy).min(axis=-1)


def mask_from_distance(distance: np.ndarray, fdist: float, region: str = "") -> RegionMask:
    """Apply the fall-off formula ``1 - clip(dist / fdist, 0, 1)`` to a distance field."""
    weights = 1.0 - np.clip(distance / fdist, 0.0, 1.0)
    return RegionMask(weights=weights, region=region)


def region_mask(
    frame_shape: tuple[int, int],
    landmarks: LandmarkSet,
    region: str,
    cfg: FalloffConfig,
) -> RegionMask:
    """Soft mask for one facial region over an (H, W) pixel grid."""
    pts = landmarks.region_points(region)
    if cfg.distance_mode == "hull":
        dist = signed_distance_grid(frame_shape, pts)
    else:
        dist = point_set_distance_grid(frame_shape, pts)
    return mask_from_distance(dist, cfg.for_region(region), region)


def face_hull_mask(
    frame_shape: tuple[int, int],
    landmarks: LandmarkSet,
    cfg: FalloffConfig,
) -> RegionMask:
    """Soft mask over the convex hull of all 68 landmarks (whole-face blending)."""
    try:
        fdist = cfg.for_region("face")
    except KeyError:
        fdist = max(cfg.fdist.values())
    dist = signed_distance_grid(frame_shape, landmarks.points)
    return mask_from_distance(dist, fdist, "face")
