"""Clip-level orchestration, file I/O, and the reproducibility manifest.

A clip run is split into two phases so that outputs never depend on
scheduling:

1. *Planning* (serial, cheap): every frame gets its own random stream,
   seeded from the master seed through :func:`derive_frame_seed`, and all
   stochastic choices (warp parameters, donor frames, donor regions) are
   drawn and recorded.
2. *Rendering* (parallel): frames are synthesized from the recorded plan
   by pure functions. Any thread count yields byte-identical output.

The manifest written next to the frames records the master seed, the full
config, every sampled parameter, and a SHA-256 digest of each output
frame's raw RGB bytes, which makes runs auditable and tamper-evident.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .blending import (
    Frame,
    SynthesisConfig,
    check_landmarks_cover_frame,
    render_frame_pfig,
    render_frame_vb,
    sample_vb_params,
    synthesize_frame_cbi,
)
from .errors import (
    ConfigError,
    CountMismatchError,
    DimensionMismatchError,
    FrameIndexGapError,
    ManifestError,
    MissingInputError,
    SynthesisError,
    UnreadableImageError,
)
from .geometry import (
    REGION_ORDER,
    LandmarkSet,
    PerturbationParams,
    build_affine,
    load_landmarks_file,
)
from .seeding import derive_frame_seed, make_rng

FRAME_NAME_FORMAT = "frame_{:06d}.png"
_FRAME_NAME_RE = re.compile(r"^frame_(\d{6})\.png$")


@dataclass(frozen=True)
class ClipSamplingPolicy:
    """Uniformly subsample ``uniform_count`` frames, then cut a
    ``clip_len``-frame consecutive window out of the subsample."""

    uniform_count: int = 32
    clip_len: int = 8

    def __post_init__(self):
        if not 1 <= self.clip_len <= self.uniform_count:
            raise ValueError(
                f"need 1 <= clip_len <= uniform_count, got {self.clip_len} / {self.uniform_count}"
            )


@dataclass(frozen=True)
class Clip:
    """Frames, their landmarks, and the source indices they came from."""

    frames: tuple[Frame, ...]
    landmarks: tuple[LandmarkSet, ...]
    source_indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "landmarks", tuple(self.landmarks))
        object.__setattr__(self, "source_indices", tuple(int(i) for i in self.source_indices))
        n = len(self.frames)
        if n < 1 or len(self.landmarks) != n or len(self.source_indices) != n:
            raise ValueError(
                f"clip needs equal, non-zero counts of frames ({len(self.frames)}), "
                f"landmarks ({len(self.landmarks)}), indices ({len(self.source_indices)})"
            )
        if any(b <= a for a, b in zip(self.source_indices, self.source_indices[1:])):
            raise ValueError("source_indices must be strictly increasing")
        shapes = {f.pixels.shape for f in self.frames}
        if len(shapes) != 1:
            raise DimensionMismatchError(f"clip frames disagree on shape: {shapes}")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class DriftReport:
    """Per-frame-pair displacement of the perturbed landmarks, in pixels."""

    pairs: list[dict]
    per_region: dict[str, float]
    mean: float
    max: float

    def is_zero(self) -> bool:
        return self.mean == 0.0 and self.max == 0.0

    def to_dict(self) -> dict:
        return {
            "pairs": self.pairs,
            "per_region": self.per_region,
            "mean": self.mean,
            "max": self.max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DriftReport":
        return cls(
            pairs=list(d["pairs"]),
            per_region=dict(d["per_region"]),
            mean=float(d["mean"]),
            max=float(d["max"]),
        )


@dataclass
class SynthesisManifest:
    """Machine-readable record of one clip synthesis run."""

    seed: int
    config: dict
    frames: list[dict] = field(default_factory=list)
    drift_report: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "config": self.config,
            "frames": self.frames,
            "drift_report": self.drift_report,
        }
        return json.dumps(doc, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SynthesisManifest":
        try:
            doc = json.loads(text)
            return cls(
                seed=int(doc["seed"]),
                config=dict(doc["config"]),
                frames=list(doc["frames"]),
                drift_report=dict(doc["drift_report"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"malformed manifest: {exc}") from exc


def frame_digest(frame: Frame) -> str:
    """SHA-256 of the frame's raw row-major RGB bytes, lowercase hex."""
    return hashlib.sha256(frame.digest_bytes()).hexdigest()


def sample_clip(
    total_frames: int,
    policy: ClipSamplingPolicy,
    rng: np.random.Generator,
) -> list[int]:
    """Pick clip frame indices out of a video of ``total_frames`` frames.

    First ``uniform_count`` indices are taken evenly spaced starting at 0
    (``(i * total) // uniform_count``), then a consecutive window of
    ``clip_len`` of them starting at a uniformly random offset is returned.
    """
    if total_frames < policy.uniform_count:
        raise ValueError(
            f"video has {total_frames} frames, fewer than the "
            f"{policy.uniform_count} needed for uniform sampling"
        )
    uniform = [(i * total_frames) // policy.uniform_count for i in range(policy.uniform_count)]
    start = int(rng.integers(0, policy.uniform_count - policy.clip_len + 1))
    return uniform[start : start + policy.clip_len]


def _pick_donor(rng: np.random.Generator, index: int, n_frames: int) -> int:
    """Uniform over the other frames of the clip."""
    j = int(rng.integers(0, n_frames - 1))
    return j if j < index else j + 1


def _smooth_vb_plan(plan: list[dict], window: int) -> None:
    """Boundary-clamped moving average of the sampled warp parameters.

    Averages rotation, scale, and translation componentwise across frames
    per region; pivots stay per-frame. Averaging bounded values stays
    within the sampling bounds, so parameter invariants are preserved.
    """
    half = window // 2
    n = len(plan)
    for region in REGION_ORDER:
        series = [plan[i]["params"][region] for i in range(n)]
        smoothed = []
        for i in range(n):
            lo, hi = max(0, i - half), min(n, i + half + 1)
            chunk = series[lo:hi]
            smoothed.append(
                PerturbationParams(
                    rotation=sum(p.rotation for p in chunk) / len(chunk),
                    scale=sum(p.scale for p in chunk) / len(chunk),
                    translation=(
                        sum(p.translation[0] for p in chunk) / len(chunk),
                        sum(p.translation[1] for p in chunk) / len(chunk),
                    ),
                    pivot=series[i].pivot,
                )
            )
        for i in range(n):
            plan[i]["params"][region] = smoothed[i]


def plan_clip(
    landmarks: tuple[LandmarkSet, ...] | list[LandmarkSet],
    cfg: SynthesisConfig,
    master_seed: int,
) -> list[dict]:
    """Draw every stochastic choice for a clip, one record per frame.

    Per frame ``i`` the stream is ``make_rng(derive_frame_seed(seed, i))``
    and the draw order is fixed: the default strategy samples warp
    parameters region by region in ``REGION_ORDER``; the donor strategies
    draw the donor index first and (for the single-region strategy) the
    region second.
    """
    n = len(landmarks)
    if cfg.strategy in ("cbi", "pfig") and n < 2:
        raise ConfigError(f"strategy {cfg.strategy!r} needs at least 2 frames to pick a donor")
    plan: list[dict] = []
    for i in range(n):
        rng = make_rng(derive_frame_seed(master_seed, i))
        if cfg.strategy == "vb":
            plan.append({"strategy": "vb", "params": sample_vb_params(landmarks[i], cfg, rng)})
        elif cfg.strategy == "cbi":
            plan.append({"strategy": "cbi", "donor_index": _pick_donor(rng, i, n)})
        else:
            donor = _pick_donor(rng, i, n)
            region = REGION_ORDER[int(rng.integers(0, len(REGION_ORDER)))]
            plan.append({"strategy": "pfig", "donor_index": donor, "region": region})
    if cfg.strategy == "vb" and cfg.smoothing_window > 1:
        _smooth_vb_plan(plan, cfg.smoothing_window)
    return plan


def _plan_to_provenance(plan_entry: dict, cfg: SynthesisConfig) -> dict:
    if plan_entry["strategy"] == "vb":
        return {
            "strategy": "vb",
            "warp_mode": cfg.warp_mode,
            "regions": {r: plan_entry["params"][r].to_dict() for r in REGION_ORDER},
        }
    if plan_entry["strategy"] == "cbi":
        return {"strategy": "cbi", "donor_index": plan_entry["donor_index"]}
    return {
        "strategy": "pfig",
        "donor_index": plan_entry["donor_index"],
        "region": plan_entry["region"],
    }


def _render_frame(clip: Clip, cfg: SynthesisConfig, index: int, plan_entry: dict) -> Frame:
    frame = clip.frames[index]
    lm = clip.landmarks[index]
    if plan_entry["strategy"] == "vb":
        out, _ = render_frame_vb(frame, lm, cfg, plan_entry["params"])
        return out
    donor = clip.frames[plan_entry["donor_index"]]
    if plan_entry["strategy"] == "cbi":
        out, _ = synthesize_frame_cbi(frame, donor, lm, cfg)
        return out
    return render_frame_pfig(frame, donor, lm, cfg, plan_entry["region"])


def synthesize_clip(
    clip: Clip,
    cfg: SynthesisConfig,
    master_seed: int,
    threads: int = 1,
) -> tuple[Clip, SynthesisManifest]:
    """Apply the configured strategy to every frame of the clip.

    Returns the synthesized clip plus a complete manifest. A failure in
    any frame aborts the whole clip with :class:`SynthesisError` carrying
    the frame index; partial clips are never returned.
    """
    if cfg.strategy == "vb":
        for i, (frame, lm) in enumerate(zip(clip.frames, clip.landmarks)):
            try:
                check_landmarks_cover_frame(frame, lm)
            except ValueError as exc:
                raise SynthesisError(i, exc) from exc
    plan = plan_clip(clip.landmarks, cfg, master_seed)

    def render(i: int) -> Frame:
        try:
            return _render_frame(clip, cfg, i, plan[i])
        except Exception as exc:
            raise SynthesisError(i, exc) from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out_frames = list(pool.map(render, range(len(clip))))
    else:
        out_frames = [render(i) for i in range(len(clip))]

    out_clip = Clip(
        frames=tuple(out_frames),
        landmarks=clip.landmarks,
        source_indices=clip.source_indices,
    )
    manifest = SynthesisManifest(seed=master_seed, config=cfg.to_dict())
    manifest.frames = [
        {
            "index": i,
            "params": _plan_to_provenance(plan[i], cfg),
            "digest": frame_digest(out_frames[i]),
        }
        for i in range(len(clip))
    ]
    manifest.drift_report = drift_statistic(manifest, list(clip.landmarks)).to_dict()
    return out_clip, manifest


def _params_from_record(record: dict, region: str) -> PerturbationParams:
    regions = record.get("regions")
    if regions is None:
        return PerturbationParams.identity()
    return PerturbationParams.from_dict(regions[region])


def drift_statistic(
    manifest: SynthesisManifest,
    landmarks: list[LandmarkSet],
) -> DriftReport:
    """Quantify the synthetic inter-frame feature drift from recorded params.

    For each consecutive frame pair ``(t, t+1)`` both frames' recorded
    transforms are applied to the *same* source landmarks (frame ``t``'s),
    so natural head motion between real frames does not contaminate the
    measurement; the reported displacement isolates the perturbation.
    """
    n = len(landmarks)
    if len(manifest.frames) != n:
        raise ManifestError(
            f"manifest covers {len(manifest.frames)} frames but {n} landmark sets were given"
        )
    records = sorted(manifest.frames, key=lambda f: f["index"])
    for i, rec in enumerate(records):
        if rec.get("index") != i or "params" not in rec:
            raise ManifestError(f"manifest is missing provenance for frame {i}")

    pairs = []
    region_totals = dict.fromkeys(REGION_ORDER, 0.0)
    for t in range(n - 1):
        source = landmarks[t]
        region_means = {}
        all_disp = []
        for region in REGION_ORDER:
            pts = source.region_points(region)
            a_t = build_affine(_params_from_record(records[t]["params"], region))
            a_t1 = build_affine(_params_from_record(records[t + 1]["params"], region))
            disp = np.linalg.norm(a_t.apply(pts) - a_t1.apply(pts), axis=1)
            region_means[region] = float(disp.mean())
            region_totals[region] += float(disp.mean())
            all_disp.append(disp)
        pair_mean = float(np.concatenate(all_disp).mean())
        pairs.append({"pair": [t, t + 1], "mean": pair_mean, "regions": region_means})

    n_pairs = max(n - 1, 1)
    per_region = {r: region_totals[r] / n_pairs for r in REGION_ORDER}
    pair_means = [p["mean"] for p in pairs]
    return DriftReport(
        pairs=pairs,
        per_region=per_region,
        mean=float(np.mean(pair_means)) if pairs else 0.0,
        max=float(np.max(pair_means)) if pairs else 0.0,
    )


def load_config(path: str | Path) -> SynthesisConfig:
    """Read a synthesis config from a JSON file."""
    p = Path(path)
    if not p.is_file():
        raise MissingInputError(f"config file not found: {p}")
    return SynthesisConfig.from_json(p.read_text(encoding="utf-8"))


def load_clip(frames_dir: str | Path, landmarks_path: str | Path) -> Clip:
    """Load a clip from a PNG frame sequence plus a landmarks JSON file.

    The directory must hold ``frame_000000.png``-style files with indices
    contiguous from 0, and the landmarks file must cover every frame.
    """
    frames_dir = Path(frames_dir)
    landmarks_path = Path(landmarks_path)
    if not frames_dir.is_dir():
        raise MissingInputError(f"frames directory not found: {frames_dir}")
    if not landmarks_path.is_file():
        raise MissingInputError(f"landmarks file not found: {landmarks_path}")

    indexed = {}
    for entry in frames_dir.iterdir():
        m = _FRAME_NAME_RE.match(entry.name)
        if m:
            indexed[int(m.group(1))] = entry
    if not indexed:
        raise MissingInputError(f"no frame_NNNNNN.png files in {frames_dir}")
    for i in range(len(indexed)):
        if i not in indexed:
            raise FrameIndexGapError(i)

    frames = []
    for i in range(len(indexed)):
        try:
            with Image.open(indexed[i]) as img:
                frames.append(Frame(np.asarray(img.convert("RGB"), dtype=np.uint8)))
        except (UnidentifiedImageError, OSError) as exc:
            raise UnreadableImageError(f"cannot decode {indexed[i]}: {exc}") from exc

    landmarks = load_landmarks_file(landmarks_path)
    if len(landmarks) != len(frames):
        raise CountMismatchError(
            f"{len(landmarks)} landmark records for {len(frames)} frames"
        )
    return Clip(
        frames=tuple(frames),
        landmarks=tuple(landmarks),
        source_indices=tuple(range(len(frames))),
    )


def store_clip(clip: Clip, manifest: SynthesisManifest, out_dir: str | Path) -> None:
    """Write frames as a lossless PNG sequence, then the manifest.

    The manifest is written last, through a temp file and an atomic
    rename, so a present manifest always describes fully written frames.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(clip.frames):
        Image.fromarray(frame.pixels, mode="RGB").save(out_dir / FRAME_NAME_FORMAT.format(i))
    tmp = out_dir / ".manifest.json.tmp"
    tmp.write_text(manifest.to_json(), encoding="utf-8")
    os.replace(tmp, out_dir / "manifest.json")


def verify_manifest(manifest_path: str | Path) -> SynthesisManifest:
    """Check every manifest digest against the frame files next to it.

    Returns the parsed manifest; raises :class:`ManifestError` on any
    missing frame or digest mismatch.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingInputError(f"manifest not found: {manifest_path}")
    manifest = SynthesisManifest.from_json(manifest_path.read_text(encoding="utf-8"))
    frames_dir = manifest_path.parent
    for rec in manifest.frames:
        path = frames_dir / FRAME_NAME_FORMAT.format(rec["index"])
        if not path.is_file():
            raise ManifestError(f"manifest names missing frame file {path.name}")
        try:
            with Image.open(path) as img:
                frame = Frame(np.asarray(img.convert("RGB"), dtype=np.uint8))
        except (UnidentifiedImageError, OSError) as exc:
            raise ManifestError(f"cannot decode {path.name}: {exc}") from exc
        digest = frame_digest(frame)
        if digest != rec["digest"]:
            raise ManifestError(
                f"digest mismatch for {path.name}: manifest {rec['digest'][:12]}..., "
                f"recomputed {digest[:12]}..."
            )
    return manifest
