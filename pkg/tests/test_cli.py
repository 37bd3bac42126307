import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from driftblend import cli
from driftblend.blending import SynthesisConfig
from driftblend.geometry import REGION_ORDER, dump_landmarks_json
from driftblend.masking import signed_distance_grid
from driftblend.pipeline import synthesize_clip, store_clip

from conftest import make_fixture_clip


@pytest.fixture(scope="module")
def clip_inputs(tmp_path_factory):
    """Fixture clip written to disk as the CLI expects it."""
    root = tmp_path_factory.mktemp("inputs")
    clip = make_fixture_clip()
    frames_dir = root / "frames"
    frames_dir.mkdir()
    for i, frame in enumerate(clip.frames):
        Image.fromarray(frame.pixels, mode="RGB").save(frames_dir / f"frame_{i:06d}.png")
    landmarks_path = root / "landmarks.json"
    landmarks_path.write_text(dump_landmarks_json(list(clip.landmarks)))
    return clip, frames_dir, landmarks_path


def read_tree_bytes(out_dir: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(out_dir.iterdir()) if p.is_file()}


class TestSynth:
    def test_vb_run_and_idempotency(self, clip_inputs, tmp_path, capsys):
        _, frames_dir, landmarks = clip_inputs
        args = [
            "synth", "--input", str(frames_dir), "--landmarks", str(landmarks),
            "--seed", "7", "--strategy", "vb",
        ]
        assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
        out = capsys.readouterr()
        payload = json.loads(out.out)
        assert payload["frames"] == 8
        assert out.err  # progress text goes to stderr
        assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
        a = read_tree_bytes(tmp_path / "a")
        b = read_tree_bytes(tmp_path / "b")
        assert a == b
        assert len([n for n in a if n.endswith(".png")]) == 8
        assert "manifest.json" in a

    @pytest.mark.parametrize("threads", [4, 8])
    def test_thread_count_does_not_change_bytes(self, clip_inputs, tmp_path, threads, capsys):
        _, frames_dir, landmarks = clip_inputs
        base = ["synth", "--input", str(frames_dir), "--landmarks", str(landmarks), "--seed", "3"]
        assert cli.main(base + ["--out", str(tmp_path / "t1"), "--threads", "1"]) == 0
        assert cli.main(base + ["--out", str(tmp_path / "tn"), "--threads", str(threads)]) == 0
        capsys.readouterr()
        assert read_tree_bytes(tmp_path / "t1") == read_tree_bytes(tmp_path / "tn")

    def test_missing_landmarks_exits_2_naming_path(self, clip_inputs, tmp_path, capsys):
        _, frames_dir, _ = clip_inputs
        missing = tmp_path / "nowhere.json"
        code = cli.main(
            ["synth", "--input", str(frames_dir), "--landmarks", str(missing),
             "--out", str(tmp_path / "o")]
        )
        assert code == 2
        assert "nowhere.json" in capsys.readouterr().err

    def test_pfig_single_frame_clip_exits_2(self, clip_inputs, tmp_path, capsys):
        clip, _, _ = clip_inputs
        single_dir = tmp_path / "one"
        single_dir.mkdir()
        Image.fromarray(clip.frames[0].pixels, mode="RGB").save(
            single_dir / "frame_000000.png"
        )
        lm = tmp_path / "one.json"
        lm.write_text(dump_landmarks_json([clip.landmarks[0]]))
        code = cli.main(
            ["synth", "--input", str(single_dir), "--landmarks", str(lm),
             "--out", str(tmp_path / "o"), "--strategy", "pfig"]
        )
        assert code == 2
        capsys.readouterr()

    def test_synthesis_failure_exits_3_with_frame_index(self, clip_inputs, tmp_path, capsys):
        clip, frames_dir, _ = clip_inputs
        # landmarks parse fine but sit far outside the frame -> runtime failure
        shifted = [
            type(clip.landmarks[0])(clip.landmarks[0].points + 900.0)
            for _ in range(len(clip))
        ]
        lm = tmp_path / "outside.json"
        lm.write_text(dump_landmarks_json(shifted))
        code = cli.main(
            ["synth", "--input", str(frames_dir), "--landmarks", str(lm),
             "--out", str(tmp_path / "o")]
        )
        assert code == 3
        assert "frame 0" in capsys.readouterr().err

    def test_refuses_in_place_output(self, clip_inputs, capsys):
        _, frames_dir, landmarks = clip_inputs
        code = cli.main(
            ["synth", "--input", str(frames_dir), "--landmarks", str(landmarks),
             "--out", str(frames_dir)]
        )
        assert code == 2
        capsys.readouterr()

    def test_dump_masks(self, clip_inputs, tmp_path, capsys):
        _, frames_dir, landmarks = clip_inputs
        out = tmp_path / "masked"
        assert cli.main(
            ["synth", "--input", str(frames_dir), "--landmarks", str(landmarks),
             "--out", str(out), "--seed", "5", "--dump-masks"]
        ) == 0
        capsys.readouterr()
        masks = list((out / "masks").iterdir())
        assert len(masks) == 8 * len(REGION_ORDER)

    def test_config_file_with_unknown_key_exits_2(self, clip_inputs, tmp_path, capsys):
        _, frames_dir, landmarks = clip_inputs
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text('{"strategy": "vb", "wat": 1}')
        code = cli.main(
            ["synth", "--input", str(frames_dir), "--landmarks", str(landmarks),
             "--out", str(tmp_path / "o"), "--config", str(cfg_path)]
        )
        assert code == 2
        capsys.readouterr()


class TestMasks:
    def test_writes_four_region_masks(self, clip_inputs, tmp_path, capsys):
        clip, frames_dir, landmarks = clip_inputs
        out = tmp_path / "m"
        assert cli.main(
            ["masks", "--input", str(frames_dir / "frame_000000.png"),
             "--landmarks", str(landmarks), "--out", str(out)]
        ) == 0
        payload = json.loads(capsys.readouterr().out)
        assert len(payload["files"]) == 4
        for region in REGION_ORDER:
            px = np.asarray(Image.open(out / f"{region}.png"))
            assert px.dtype == np.uint8
            dist = signed_distance_grid(px.shape, clip.landmarks[0].region_points(region))
            assert (px[dist < -0.5] == 255).all()

    def test_tiny_falloff_gives_nearly_binary_masks(self, clip_inputs, tmp_path, capsys):
        clip, frames_dir, landmarks = clip_inputs
        out = tmp_path / "m1"
        assert cli.main(
            ["masks", "--input", str(frames_dir / "frame_000000.png"),
             "--landmarks", str(landmarks), "--out", str(out), "--fdist", "1.0"]
        ) == 0
        capsys.readouterr()
        for region in REGION_ORDER:
            px = np.asarray(Image.open(out / f"{region}.png"))
            soft = (px > 0) & (px < 255)
            dist = signed_distance_grid(px.shape, clip.landmarks[0].region_points(region))
            # soft band is confined to the <= 1 px falloff annulus
            assert (dist[soft] > 0.0).all()
            assert (dist[soft] < 1.0).all()

    def test_invalid_landmarks_exit_2(self, clip_inputs, tmp_path, capsys):
        _, frames_dir, _ = clip_inputs
        bad = tmp_path / "bad.json"
        bad.write_text('{"frames": [{"index": 0, "landmarks": [[0, 0]]}]}')
        code = cli.main(
            ["masks", "--input", str(frames_dir / "frame_000000.png"),
             "--landmarks", str(bad), "--out", str(tmp_path / "m")]
        )
        assert code == 2
        capsys.readouterr()


class TestDriftStats:
    @pytest.fixture()
    def synthesized_dir(self, clip_inputs, tmp_path):
        clip, _, _ = clip_inputs
        out_clip, manifest = synthesize_clip(clip, SynthesisConfig(), 7)
        out_dir = tmp_path / "synth"
        store_clip(out_clip, manifest, out_dir)
        return out_dir

    def test_prints_report_json(self, synthesized_dir, capsys):
        assert cli.main(["drift-stats", "--manifest", str(synthesized_dir / "manifest.json")]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["mean"] > 0
        assert len(report["pairs"]) == 7

    def test_identity_manifest_reports_zero(self, clip_inputs, tmp_path, capsys):
        clip, _, _ = clip_inputs
        cfg = SynthesisConfig(rotation_bound=0.0, scale_bound=0.0, translation_bound=0.0)
        out_clip, manifest = synthesize_clip(clip, cfg, 1)
        out_dir = tmp_path / "ident"
        store_clip(out_clip, manifest, out_dir)
        assert cli.main(["drift-stats", "--manifest", str(out_dir / "manifest.json")]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["mean"] == 0.0 and report["max"] == 0.0

    def test_recompute_from_landmarks_matches_stored(self, synthesized_dir, clip_inputs, capsys):
        _, _, landmarks = clip_inputs
        assert cli.main(
            ["drift-stats", "--manifest", str(synthesized_dir / "manifest.json"),
             "--landmarks", str(landmarks)]
        ) == 0
        recomputed = json.loads(capsys.readouterr().out)
        stored = json.loads((synthesized_dir / "manifest.json").read_text())["drift_report"]
        assert recomputed == stored

    def test_tampered_frame_exits_2(self, synthesized_dir, capsys):
        target = synthesized_dir / "frame_000004.png"
        px = np.asarray(Image.open(target).convert("RGB")).copy()
        px[5, 5, 1] ^= 0x40
        Image.fromarray(px, mode="RGB").save(target)
        assert cli.main(["drift-stats", "--manifest", str(synthesized_dir / "manifest.json")]) == 2
        assert "digest mismatch" in capsys.readouterr().err

    def test_report_dir_renders_csv_and_figure(self, clip_inputs, tmp_path, capsys):
        clip, _, _ = clip_inputs
        out_clip, manifest = synthesize_clip(clip, SynthesisConfig(), 11)
        out_dir = tmp_path / "r"
        store_clip(out_clip, manifest, out_dir)
        report_dir = tmp_path / "report"
        assert cli.main(
            ["drift-stats", "--manifest", str(out_dir / "manifest.json"),
             "--report-dir", str(report_dir)]
        ) == 0
        capsys.readouterr()
        csv_text = (report_dir / "drift_report.csv").read_text()
        expected_header = "pair_start,pair_end,mean_displacement," + ",".join(REGION_ORDER)
        assert csv_text.splitlines()[0] == expected_header
        assert len(csv_text.splitlines()) == 8  # header + 7 pairs
        assert (report_dir / "drift_report.png").stat().st_size > 0


class TestStaCheck:
    def test_default_run_passes(self, capsys):
        assert cli.main(["sta-check", "--seed", "3"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["passed"] is True
        assert payload["param_count"] > 0
        assert payload["checks"]["forward_matches_reference"] is True

    def test_zero_sum_temporal_regime(self, capsys):
        assert cli.main(
            ["sta-check", "--t", "8", "--h", "14", "--w", "14", "--c", "64",
             "--zero-sum-temporal"]
        ) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["e_t_max_abs"] <= 1e-9
        assert payload["checks"]["temporal_branch_zero_on_constant"] is True

    def test_invalid_heads_exits_2(self, capsys):
        assert cli.main(["sta-check", "--c", "64", "--down-ratio", "4", "--heads", "5"]) == 2
        capsys.readouterr()

    def test_forced_invariant_failure_exits_1(self, monkeypatch, capsys):
        monkeypatch.setattr("driftblend.adapter.param_count", lambda cfg: -1)
        assert cli.main(["sta-check", "--c", "8", "--down-ratio", "2", "--heads", "2"]) == 1
        payload = json.loads(capsys.readouterr().out)
        assert payload["passed"] is False

    def test_non_zero_sum_reports_note(self, capsys):
        assert cli.main(["sta-check", "--c", "16", "--down-ratio", "4", "--heads", "2",
                         "--no-zero-init-up"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert "note" in payload


class TestUsageErrors:
    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["frobnicate"])
        assert exc.value.code == 2

    def test_bad_strategy_value_exits_2(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli.main(["synth", "--input", "x", "--landmarks", "y", "--out", "z",
                      "--strategy", "sbi"])
        assert exc.value.code == 2
