"""Per-region dynamic blending and the frame synthesis strategies.

A synthesized frame is built in continuous intensity and quantized to
8-bit storage exactly once, at the end:

1. warp: per-region (default) or shared affine perturbation of the frame
2. mask: soft region masks from the *unperturbed* landmarks
3. blend: per-region convex combination of warped and original pixels
4. composite: alpha-weighted sum of the per-region blends

Three strategies share this machinery:

``vb``
    Self-blending with a warped copy of the same frame; the default, and
    the one that simulates per-frame feature drift.
``cbi``
    Blends another frame of the same clip into the whole face hull, no
    warping. Comparison strategy.
``pfig``
    Blends exactly one randomly chosen facial region from another frame of
    the same clip. Comparison strategy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .errors import ConfigError, DimensionMismatchError, InvalidWeightsError
from .geometry import (
    REGION_ORDER,
    LandmarkSet,
    PerturbationBounds,
    PerturbationParams,
    build_affine,
    sample_perturbation,
    warp_pixels,
)
from .masking import (
    DISTANCE_MODES,
    FalloffConfig,
    RegionMask,
    face_hull_mask,
    region_mask,
)

STRATEGIES = ("vb", "cbi", "pfig")
WARP_MODES = ("per-region", "shared")

# Fractions of the landmark bbox diagonal used for unspecified defaults.
DEFAULT_TRANSLATION_FRACTION = 0.02
DEFAULT_FALLOFF_FRACTION = 0.1

WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True)
class Frame:
    """One RGB frame, 8-bit storage, shape (H, W, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"frame pixels must have shape (H, W, 3), got {px.shape}")
        if px.dtype != np.uint8:
            raise ValueError(f"frame pixels must be uint8, got {px.dtype}")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]

    def digest_bytes(self) -> bytes:
        """Raw row-major RGB bytes, the input to manifest digests."""
        return self.pixels.tobytes()


@dataclass(frozen=True)
class BlendWeights:
    """Per-region composite weights; non-negative and summing to 1."""

    alpha: Mapping[str, float]

    def __post_init__(self):
        alpha = dict(self.alpha)
        if not alpha:
            raise InvalidWeightsError("weights mapping must not be empty")
        if any(v < 0 for v in alpha.values()):
            raise InvalidWeightsError("composite weights must be non-negative")
        total = sum(alpha[r] for r in sorted(alpha))
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise InvalidWeightsError(f"composite weights must sum to 1, got {total!r}")
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def uniform(cls, regions: tuple[str, ...] = REGION_ORDER) -> "BlendWeights":
        return cls(dict.fromkeys(regions, 1.0 / len(regions)))


@dataclass(frozen=True)
class SynthesisConfig:
    """Everything the frame synthesizer needs besides the pixels.

    ``translation_bound`` and missing fall-off entries may be left as
    ``None``; they then resolve per frame to fixed fractions of the
    landmark bounding-box diagonal, keeping the perturbation subtle at any
    face scale.
    """

    rotation_bound: float = 0.035
    scale_bound: float = 0.03
    translation_bound: float | None = None
    falloff: Mapping[str, float] = field(default_factory=dict)
    falloff_default: float | None = None
    distance_mode: str = "hull"
    weights: BlendWeights = field(default_factory=BlendWeights.uniform)
    warp_mode: str = "per-region"
    strategy: str = "vb"
    smoothing_window: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.warp_mode not in WARP_MODES:
            raise ConfigError(f"warp_mode must be one of {WARP_MODES}, got {self.warp_mode!r}")
        if self.distance_mode not in DISTANCE_MODES:
            raise ConfigError(
                f"distance_mode must be one of {DISTANCE_MODES}, got {self.distance_mode!r}"
            )
        if self.rotation_bound < 0 or self.scale_bound < 0 or not self.scale_bound < 1:
            raise ConfigError("rotation_bound must be >= 0 and scale_bound in [0, 1)")
        if self.translation_bound is not None and self.translation_bound < 0:
            raise ConfigError("translation_bound must be >= 0")
        if self.smoothing_window < 0:
            raise ConfigError("smoothing_window must be >= 0")
        for region, value in dict(self.falloff).items():
            if region not in REGION_ORDER and region != "face":
                raise ConfigError(f"unknown fall-off region {region!r}")
            if not value > 0:
                raise ConfigError(f"fall-off for {region!r} must be positive")
        if self.falloff_default is not None and not self.falloff_default > 0:
            raise ConfigError("falloff_default must be positive")
        if set(self.weights.alpha) != set(REGION_ORDER):
            raise ConfigError(
                f"synthesis weights must cover exactly the regions {REGION_ORDER}"
            )
        object.__setattr__(self, "falloff", dict(self.falloff))

    def resolve_bounds(self, landmarks: LandmarkSet) -> PerturbationBounds:
        """Absolute perturbation bounds for one frame's landmarks."""
        u_t = self.translation_bound
        if u_t is None:
            u_t = DEFAULT_TRANSLATION_FRACTION * landmarks.bbox_diagonal()
        return PerturbationBounds(u_r=self.rotation_bound, u_s=self.scale_bound, u_t=u_t)

    def resolve_falloff(self, landmarks: LandmarkSet) -> FalloffConfig:
        """Absolute fall-off distances for one frame's landmarks."""
        default = self.falloff_default
        if default is None:
            default = DEFAULT_FALLOFF_FRACTION * landmarks.bbox_diagonal()
        fdist = {r: self.falloff.get(r, default) for r in REGION_ORDER}
        fdist["face"] = self.falloff.get("face", default)
        return FalloffConfig(fdist=fdist, distance_mode=self.distance_mode)

    def to_dict(self) -> dict:
        return {
            "rotation_bound": self.rotation_bound,
            "scale_bound": self.scale_bound,
            "translation_bound": self.translation_bound,
            "falloff": dict(self.falloff),
            "falloff_default": self.falloff_default,
            "distance_mode": self.distance_mode,
            "weights": dict(self.weights.alpha),
            "warp_mode": self.warp_mode,
            "strategy": self.strategy,
            "smoothing_window": self.smoothing_window,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SynthesisConfig":
        """Build a config from parsed JSON; unknown keys are rejected."""
        known = {
            "rotation_bound",
            "scale_bound",
            "translation_bound",
            "falloff",
            "falloff_default",
            "distance_mode",
            "weights",
            "warp_mode",
            "strategy",
            "smoothing_window",
        }
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(doc)
        if "weights" in kwargs:
            try:
                kwargs["weights"] = BlendWeights(kwargs["weights"])
            except (TypeError, InvalidWeightsError) as exc:
                raise ConfigError(f"invalid weights: {exc}") from exc
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "SynthesisConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must contain a JSON object")
        return cls.from_dict(doc)

    def with_overrides(self, **kwargs) -> "SynthesisConfig":
        return replace(self, **kwargs)


def _as_float_pixels(frame) -> np.ndarray:
    if isinstance(frame, Frame):
        return frame.pixels.astype(np.float64)
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionMismatchError(f"expected (H, W, 3) pixels, got shape {arr.shape}")
    return arr


def quantize(pixels: np.ndarray) -> Frame:
    """Quantize continuous intensities to 8-bit storage, round half to even."""
    return Frame(np.clip(np.rint(pixels), 0, 255).astype(np.uint8))


def blend_region(frame, warped, mask: RegionMask) -> np.ndarray:
    """Per-pixel convex combination ``mask * warped + (1 - mask) * frame``.

    Operates in continuous intensity and returns float64 pixels; callers
    quantize once at the end of full frame synthesis.
    """
    base = _as_float_pixels(frame)
    warp = _as_float_pixels(warped)
    if base.shape != warp.shape or mask.weights.shape != base.shape[:2]:
        raise DimensionMismatchError(
            f"frame {base.shape}, warped {warp.shape}, and mask {mask.weights.shape} disagree"
        )
    m = mask.weights[..., None]
    return m * warp + (1.0 - m) * base


def composite(blended: Mapping[str, np.ndarray], weights: BlendWeights) -> np.ndarray:
    """Alpha-weighted sum of per-region blended frames (still continuous)."""
    if set(blended) != set(weights.alpha):
        raise InvalidWeightsError(
            f"blended regions {sorted(blended)} do not match weights {sorted(weights.alpha)}"
        )
    shapes = {np.asarray(arr).shape for arr in blended.values()}
    if len(shapes) != 1:
        raise DimensionMismatchError(f"blended frames disagree on shape: {shapes}")
    out = np.zeros(next(iter(shapes)), dtype=np.float64)
    for region in sorted(blended):
        out += weights.alpha[region] * np.asarray(blended[region], dtype=np.float64)
    return out


def check_landmarks_cover_frame(frame: Frame, landmarks: LandmarkSet) -> None:
    """Require at least half of the landmarks to fall inside the frame rect."""
    pts = landmarks.points
    inside = (
        (pts[:, 0] >= 0)
        & (pts[:, 0] < frame.width)
        & (pts[:, 1] >= 0)
        & (pts[:, 1] < frame.height)
    )
    if inside.sum() * 2 < len(pts):
        raise ValueError(
            f"only {int(inside.sum())}/{len(pts)} landmarks fall inside the "
            f"{frame.width}x{frame.height} frame"
        )


def sample_vb_params(
    landmarks: LandmarkSet,
    cfg: SynthesisConfig,
    rng: np.random.Generator,
) -> dict[str, PerturbationParams]:
    """Sample the warp parameters one frame of the default strategy uses.

    In per-region mode each region gets its own draw, in the fixed
    ``REGION_ORDER``, pivoted on its own centroid. In shared mode a single
    draw pivoted on the full-face centroid is reused for every region.
    """
    bounds = cfg.resolve_bounds(landmarks)
    if cfg.warp_mode == "shared":
        shared = sample_perturbation(bounds, landmarks.centroid(), rng)
        return {region: shared for region in REGION_ORDER}
    return {
        region: sample_perturbation(bounds, landmarks.centroid(region), rng)
        for region in REGION_ORDER
    }


def render_frame_vb(
    frame: Frame,
    landmarks: LandmarkSet,
    cfg: SynthesisConfig,
    params: Mapping[str, PerturbationParams],
) -> tuple[Frame, dict[str, RegionMask]]:
    """Deterministic part of the default strategy, given sampled params."""
    base = frame.pixels.astype(np.float64)
    falloff = cfg.resolve_falloff(landmarks)
    masks: dict[str, RegionMask] = {}
    blended: dict[str, np.ndarray] = {}
    if cfg.warp_mode == "shared":
        shared_warp = warp_pixels(base, build_affine(params[REGION_ORDER[0]]))
    for region in REGION_ORDER:
        if cfg.warp_mode == "shared":
            warped = shared_warp
        else:
            warped = warp_pixels(base, build_affine(params[region]))
        mask = region_mask(frame.shape, landmarks, region, falloff)
        masks[region] = mask
        blended[region] = blend_region(base, warped, mask)
    return quantize(composite(blended, cfg.weights)), masks


def synthesize_frame_vb(
    frame: Frame,
    landmarks: LandmarkSet,
    cfg: SynthesisConfig,
    rng: np.random.Generator,
) -> tuple[Frame, dict]:
    """Warp-and-self-blend synthesis of one frame (the default strategy).

    Returns the synthesized frame and a provenance record holding every
    sampled parameter, sufficient to reproduce the output exactly.
    """
    check_landmarks_cover_frame(frame, landmarks)
    params = sample_vb_params(landmarks, cfg, rng)
    out, _ = render_frame_vb(frame, landmarks, cfg, params)
    provenance = {
        "strategy": "vb",
        "warp_mode": cfg.warp_mode,
        "regions": {region: params[region].to_dict() for region in REGION_ORDER},
    }
    return out, provenance


def synthesize_frame_cbi(
    frame: Frame,
    donor: Frame,
    landmarks: LandmarkSet,
    cfg: SynthesisConfig,
    rng: np.random.Generator | None = None,
) -> tuple[Frame, dict]:
    """Blend the donor frame into the whole face hull of ``frame``.

    No warping: the temporal mismatch between the two frames is the
    artifact. The donor must come from another index of the same clip;
    picking it is the pipeline's job.
    """
    if donor.pixels.shape != frame.pixels.shape:
        raise DimensionMismatchError(
            f"donor shape {donor.pixels.shape} != frame shape {frame.pixels.shape}"
        )
    mask = face_hull_mask(frame.shape, landmarks, cfg.resolve_falloff(landmarks))
    out = quantize(blend_region(frame, donor, mask))
    return out, {"strategy": "cbi"}


def render_frame_pfig(
    frame: Frame,
    donor: Frame,
    landmarks: LandmarkSet,
    cfg: SynthesisConfig,
    region: str,
) -> Frame:
    """Deterministic part of the single-region donor blend."""
    if donor.pixels.shape != frame.pixels.shape:
        raise DimensionMismatchError(
            f"donor shape {donor.pixels.shape} != frame shape {frame.pixels.shape}"
        )
    mask = region_mask(frame.shape, landmarks, region, cfg.resolve_falloff(landmarks))
    return quantize(blend_region(frame, donor, mask))


def synthesize_frame_pfig(
    frame: Frame,
    donor: Frame,
    landmarks: LandmarkSet,
    cfg: SynthesisConfig,
    rng: np.random.Generator,
) -> tuple[Frame, dict]:
    """Blend one randomly chosen facial region of the donor into ``frame``."""
    region = REGION_ORDER[int(rng.integers(0, len(REGION_ORDER)))]
    out = render_frame_pfig(frame, donor, landmarks, cfg, region)
    return out, {"strategy": "pfig", "region": region}
