"""Command-line interface.

Machine-readable results go to stdout as JSON; progress and errors go to
stderr. Exit codes: 0 success, 1 invariant-check failure, 2 input or
config error, 3 synthesis failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import adapter as sta
from .blending import Frame, SynthesisConfig
from .errors import (
    ClipLoadError,
    ConfigError,
    DriftBlendError,
    ManifestError,
    MissingInputError,
    SynthesisError,
)
from .geometry import REGION_ORDER, load_landmarks_file
from .masking import face_hull_mask, region_mask
from .pipeline import (
    DriftReport,
    drift_statistic,
    load_clip,
    load_config,
    store_clip,
    synthesize_clip,
    verify_manifest,
)
from .seeding import make_rng
from .tensor_ops import multi_head_attention

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT_ERROR = 2
EXIT_SYNTHESIS_ERROR = 3


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _seed_type(value: str) -> int:
    seed = int(value)
    if not 0 <= seed < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return seed


def _scales_type(value: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in value.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse scales {value!r}; expected e.g. 3,5,7")


def _resolve_config(args) -> SynthesisConfig:
    cfg = load_config(args.config) if args.config else SynthesisConfig()
    overrides = {}
    if getattr(args, "strategy", None):
        overrides["strategy"] = args.strategy
    if getattr(args, "warp_mode", None):
        overrides["warp_mode"] = args.warp_mode
    return cfg.with_overrides(**overrides) if overrides else cfg


def _dump_masks(clip, cfg, manifest, out_dir: Path) -> None:
    masks_dir = out_dir / "masks"
    masks_dir.mkdir(parents=True, exist_ok=True)
    for record in manifest.frames:
        i = record["index"]
        lm = clip.landmarks[i]
        falloff = cfg.resolve_falloff(lm)
        if cfg.strategy == "vb":
            named = {r: region_mask(clip.frames[i].shape, lm, r, falloff) for r in REGION_ORDER}
        elif cfg.strategy == "cbi":
            named = {"face": face_hull_mask(clip.frames[i].shape, lm, falloff)}
        else:
            region = record["params"]["region"]
            named = {region: region_mask(clip.frames[i].shape, lm, region, falloff)}
        for name, mask in named.items():
            Image.fromarray(mask.to_grayscale(), mode="L").save(
                masks_dir / f"frame_{i:06d}_{name}.png"
            )


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    input_dir = Path(args.input)
    if out_dir.resolve() == input_dir.resolve():
        raise ConfigError("refusing to write output into the input directory")
    cfg = _resolve_config(args)
    clip = load_clip(input_dir, args.landmarks)
    _log(f"loaded {len(clip)} frames from {input_dir}")
    out_clip, manifest = synthesize_clip(clip, cfg, args.seed, threads=args.threads)
    store_clip(out_clip, manifest, out_dir)
    if args.dump_masks:
        _dump_masks(clip, cfg, manifest, out_dir)
    _log(f"wrote {len(out_clip)} frames and manifest.json to {out_dir}")
    _emit(
        {
            "out_dir": str(out_dir),
            "frames": len(out_clip),
            "seed": args.seed,
            "strategy": cfg.strategy,
            "drift_mean": manifest.drift_report["mean"],
        }
    )
    return EXIT_OK


def cmd_masks(args) -> int:
    frame_path = Path(args.input)
    if not frame_path.is_file():
        raise MissingInputError(f"input frame not found: {frame_path}")
    try:
        with Image.open(frame_path) as img:
            frame = Frame(np.asarray(img.convert("RGB"), dtype=np.uint8))
    except (UnidentifiedImageError, OSError) as exc:
        raise MissingInputError(f"cannot decode {frame_path}: {exc}") from exc
    landmark_sets = load_landmarks_file(args.landmarks)
    if not 0 <= args.frame_index < len(landmark_sets):
        raise ConfigError(
            f"frame index {args.frame_index} out of range for {len(landmark_sets)} landmark records"
        )
    lm = landmark_sets[args.frame_index]

    overrides = {}
    for region in REGION_ORDER:
        value = getattr(args, f"fdist_{region}")
        if value is not None:
            overrides[region] = value
    cfg = SynthesisConfig(
        falloff=overrides,
        falloff_default=args.fdist,
        distance_mode=args.distance_mode,
    )
    falloff = cfg.resolve_falloff(lm)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for region in REGION_ORDER:
        mask = region_mask(frame.shape, lm, region, falloff)
        path = out_dir / f"{region}.png"
        Image.fromarray(mask.to_grayscale(), mode="L").save(path)
        written.append(str(path))
    _emit({"out_dir": str(out_dir), "files": written})
    return EXIT_OK


def cmd_drift_stats(args) -> int:
    manifest = verify_manifest(args.manifest)
    _log(f"verified {len(manifest.frames)} frame digests")
    if args.landmarks:
        landmarks = load_landmarks_file(args.landmarks)
        report = drift_statistic(manifest, landmarks)
    else:
        report = DriftReport.from_dict(manifest.drift_report)
    if args.report_dir:
        from .report import write_drift_report_files

        paths = write_drift_report_files(report, args.report_dir)
        _log("wrote " + ", ".join(str(p) for p in paths))
    _emit(report.to_dict())
    return EXIT_OK


def cmd_sta_check(args) -> int:
    cfg = sta.StAConfig(
        channels=args.c,
        down_ratio=args.down_ratio,
        scales=args.scales,
        heads=args.heads,
        zero_init_up=args.zero_init_up,
        zero_sum_temporal=args.zero_sum_temporal,
        residual=args.residual,
    )
    if args.t < 1 or args.h < 1 or args.w < 1:
        raise ConfigError("dims --t/--h/--w must be positive")

    rng = make_rng(args.seed)
    weights = sta.init_weights(cfg, rng)
    base = rng.standard_normal((args.h, args.w, cfg.channels))
    probe = sta.probe_constant_video(weights, cfg, base, t=args.t)

    checks: dict[str, bool] = {}
    checks["param_count_matches_enumeration"] = probe["param_count"] == weights.param_count()

    x_in = rng.standard_normal((args.t, args.h, args.w, cfg.channels))
    bundle = sta.adapter_forward(x_in, weights, cfg)
    checks["shape_preserved"] = bundle.x_out.shape == x_in.shape
    if cfg.zero_init_up and cfg.residual:
        checks["zero_init_identity"] = bool(np.array_equal(bundle.x_out, x_in))

    seq = rng.standard_normal((5, cfg.c_prime))
    _, attn = multi_head_attention(seq, seq, seq, weights.attention, return_weights=True)
    checks["attention_rows_sum_to_one"] = bool(
        np.abs(attn.sum(axis=-1) - 1.0).max() <= 1e-9
    )

    checks["spatial_branch_constant_in_time"] = probe["e_s_time_variation"] <= 1e-9
    if cfg.zero_sum_temporal:
        checks["temporal_branch_zero_on_constant"] = probe["e_t_max_abs"] <= 1e-9

    tiny = rng.standard_normal((2, 3, 3, cfg.channels))
    expected = sta.reference_forward(tiny, weights, cfg)
    actual = sta.adapter_forward(tiny, weights, cfg).x_out
    checks["forward_matches_reference"] = bool(np.abs(actual - expected).max() <= 1e-6)

    passed = all(checks.values())
    _emit({**probe, "checks": checks, "passed": passed})
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftblend",
        description="Deterministic facial-drift video blending and adapter checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="synthesize a blended clip from frames + landmarks")
    p_synth.add_argument("--input", required=True, help="directory of frame_NNNNNN.png files")
    p_synth.add_argument("--landmarks", required=True, help="landmarks JSON file")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--seed", type=_seed_type, default=0, help="master seed (u64)")
    p_synth.add_argument("--config", default=None, help="synthesis config JSON file")
    p_synth.add_argument("--strategy", choices=["vb", "cbi", "pfig"], default=None)
    p_synth.add_argument("--warp-mode", choices=["shared", "per-region"], default=None)
    p_synth.add_argument("--threads", type=int, default=1)
    p_synth.add_argument("--dump-masks", action="store_true")
    p_synth.set_defaults(func=cmd_synth)

    p_masks = sub.add_parser("masks", help="dump per-region grayscale masks for one frame")
    p_masks.add_argument("--input", required=True, help="frame image file")
    p_masks.add_argument("--landmarks", required=True, help="landmarks JSON file")
    p_masks.add_argument("--out", required=True, help="output directory")
    p_masks.add_argument("--frame-index", type=int, default=0)
    p_masks.add_argument("--fdist", type=float, default=None, help="uniform fall-off distance")
    for region in REGION_ORDER:
        p_masks.add_argument(f"--fdist-{region}", type=float, default=None)
    p_masks.add_argument("--distance-mode", choices=["hull", "points"], default="hull")
    p_masks.set_defaults(func=cmd_masks)

    p_drift = sub.add_parser("drift-stats", help="verify a manifest and print its drift report")
    p_drift.add_argument("--manifest", required=True, help="path to manifest.json")
    p_drift.add_argument(
        "--landmarks", default=None, help="recompute the report from these landmarks"
    )
    p_drift.add_argument(
        "--report-dir", default=None, help="also write drift_report.csv and drift_report.png here"
    )
    p_drift.set_defaults(func=cmd_drift_stats)

    p_sta = sub.add_parser("sta-check", help="run adapter invariant checks and probes")
    p_sta.add_argument("--t", type=int, default=8)
    p_sta.add_argument("--h", type=int, default=14)
    p_sta.add_argument("--w", type=int, default=14)
    p_sta.add_argument("--c", type=int, default=64)
    p_sta.add_argument("--down-ratio", type=int, default=4)
    p_sta.add_argument("--heads", type=int, default=8)
    p_sta.add_argument("--scales", type=_scales_type, default=(3, 5, 7))
    p_sta.add_argument("--zero-sum-temporal", action="store_true")
    p_sta.add_argument(
        "--zero-init-up", action=argparse.BooleanOptionalAction, default=True
    )
    p_sta.add_argument(
        "--residual", action=argparse.BooleanOptionalAction, default=True
    )
    p_sta.add_argument("--seed", type=_seed_type, default=0)
    p_sta.set_defaults(func=cmd_sta_check)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SynthesisError as exc:
        _log(f"error: {exc}")
        return EXIT_SYNTHESIS_ERROR
    except (ClipLoadError, ConfigError, ManifestError) as exc:
        _log(f"error: {exc}")
        return EXIT_INPUT_ERROR
    except DriftBlendError as exc:
        _log(f"error: {exc}")
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
