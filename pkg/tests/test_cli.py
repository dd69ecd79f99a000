import json

import numpy as np
import pytest

from viewx import imageio
from viewx.cli import main
from viewx.geometry import (
    CameraIntrinsics,
    CameraPose,
    intrinsics_to_dict,
    pose_to_dict,
    save_pose_file,
)

INTR = CameraIntrinsics(fx=20.0, fy=20.0, cx=8.0, cy=8.0, width=16, height=16)


def write_line_poses(path, xs):
    poses = [CameraPose(rotation=np.eye(3), translation=np.array([x, 0.0, 0.0])) for x in xs]
    save_pose_file(path, poses)
    return poses


def write_scene(tmp_path, seed=0):
    rng = np.random.default_rng(seed)
    image = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    depth = rng.uniform(1.0, 4.0, size=(16, 16))
    imageio.write_ppm(tmp_path / "img.ppm", image)
    imageio.write_pfm(tmp_path / "depth.pfm", depth.astype(np.float32))
    (tmp_path / "intr.json").write_text(json.dumps(intrinsics_to_dict(INTR)))
    (tmp_path / "target.json").write_text(
        json.dumps(pose_to_dict(CameraPose(rotation=np.eye(3), translation=np.array([0.5, 0.0, 0.0]))))
    )
    return image, depth


def write_frames(tmp_path, frames=3, size=8, seed=1, full_masks=True):
    rng = np.random.default_rng(seed)
    out = tmp_path / "frames"
    out.mkdir()
    for k in range(frames):
        image = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
        imageio.write_ppm(out / f"frame_{k:05d}.ppm", image)
        if full_masks:
            mask = np.full((size, size), 255, dtype=np.uint8)
        else:
            mask = (rng.random((size, size)) < 0.7).astype(np.uint8) * 255
        imageio.write_pgm(out / f"mask_{k:05d}.pgm", mask)
    return out


class TestDegree:
    def test_collinear_prints_three(self, tmp_path, capsys):
        path = tmp_path / "poses.json"
        write_line_poses(path, [0.0, 1.0, 2.0, 7.0])
        assert main(["degree", str(path), "--target-index", "3"]) == 0
        out = capsys.readouterr().out
        assert "e = 3" in out

    def test_centroid_query_is_zero(self, tmp_path, capsys):
        path = tmp_path / "poses.json"
        write_line_poses(path, [0.0, 2.0])
        (tmp_path / "q.json").write_text(
            json.dumps(pose_to_dict(CameraPose(rotation=np.eye(3), translation=np.array([1.0, 0, 0]))))
        )
        assert main(["degree", str(path), "--target-pose", str(tmp_path / "q.json")]) == 0
        assert "e = 0" in capsys.readouterr().out

    def test_degenerate_gives_exit_2(self, tmp_path):
        # coincident training views, query elsewhere: degree is unbounded
        path = tmp_path / "poses.json"
        write_line_poses(path, [0.0, 0.0, 5.0])
        assert main(["degree", str(path), "--target-index", "2"]) == 2

    def test_missing_file_gives_exit_1(self, tmp_path):
        assert main(["degree", str(tmp_path / "nope.json"), "--target-index", "0"]) == 1

    def test_empty_pose_file_gives_exit_2(self, tmp_path):
        (tmp_path / "poses.json").write_text('{"poses": []}')
        assert main(["degree", str(tmp_path / "poses.json"), "--target-index", "0"]) == 2


class TestSplit:
    def test_collinear_split(self, tmp_path):
        path = tmp_path / "poses.json"
        write_line_poses(path, [0.0, 1.0, 2.0, 3.0, 12.0])
        out = tmp_path / "split.json"
        hist = tmp_path / "hist.csv"
        code = main(
            ["split", str(path), "--e-threshold", "3", "--max-test", "3",
             "--out", str(out), "--hist", str(hist)]
        )
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["test"] == [4]
        assert hist.read_text().startswith("view_index,role,e")

    def test_infinite_threshold_empty_test(self, tmp_path):
        path = tmp_path / "poses.json"
        write_line_poses(path, [0.0, 1.0, 2.0])
        out = tmp_path / "split.json"
        assert main(["split", str(path), "--e-threshold", "inf", "--out", str(out)]) == 0
        assert json.loads(out.read_text())["test"] == []

    def test_deterministic_across_runs(self, tmp_path):
        path = tmp_path / "poses.json"
        write_line_poses(path, [0.0, 1.0, 2.0, 3.0, 12.0])
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        main(["split", str(path), "--e-threshold", "1", "--out", str(a)])
        main(["split", str(path), "--e-threshold", "1", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()


class TestRenderPc:
    def test_round_trip_at_source_pose(self, tmp_path):
        image, _ = write_scene(tmp_path)
        (tmp_path / "source.json").write_text(
            json.dumps(pose_to_dict(CameraPose(rotation=np.eye(3), translation=np.zeros(3))))
        )
        out = tmp_path / "video"
        code = main(
            ["render-pc", "--image", str(tmp_path / "img.ppm"),
             "--depth", str(tmp_path / "depth.pfm"),
             "--intrinsics", str(tmp_path / "intr.json"),
             "--target-pose", str(tmp_path / "source.json"),
             "--frames", "2", "--radius", "0", "--out", str(out)]
        )
        assert code == 0
        frame0 = imageio.read_ppm(out / "frame_00000.ppm")
        np.testing.assert_array_equal(frame0, image)
        mask0 = imageio.read_pgm(out / "mask_00000.pgm")
        assert mask0.min() == 255  # all depths valid in this scene
        assert (out / "manifest.json").exists()

    def test_two_frames_written(self, tmp_path):
        write_scene(tmp_path)
        out = tmp_path / "video"
        main(
            ["render-pc", "--image", str(tmp_path / "img.ppm"),
             "--depth", str(tmp_path / "depth.pfm"),
             "--intrinsics", str(tmp_path / "intr.json"),
             "--target-pose", str(tmp_path / "target.json"),
             "--frames", "2", "--out", str(out)]
        )
        names = sorted(p.name for p in out.glob("frame_*.ppm"))
        assert names == ["frame_00000.ppm", "frame_00001.ppm"]

    def test_manifest_replay_matches(self, tmp_path):
        write_scene(tmp_path)
        first = tmp_path / "video"
        main(
            ["render-pc", "--image", str(tmp_path / "img.ppm"),
             "--depth", str(tmp_path / "depth.pfm"),
             "--intrinsics", str(tmp_path / "intr.json"),
             "--target-pose", str(tmp_path / "target.json"),
             "--frames", "3", "--out", str(first)]
        )
        replay = tmp_path / "replay"
        assert main(["render-pc", "--manifest", str(first / "manifest.json"),
                     "--out", str(replay)]) == 0
        for frame in first.glob("frame_*.ppm"):
            assert (replay / frame.name).read_bytes() == frame.read_bytes()

    def test_missing_depth_gives_exit_1(self, tmp_path):
        write_scene(tmp_path)
        assert main(
            ["render-pc", "--image", str(tmp_path / "img.ppm"),
             "--depth", str(tmp_path / "missing.pfm"),
             "--intrinsics", str(tmp_path / "intr.json"),
             "--target-pose", str(tmp_path / "target.json"),
             "--frames", "2", "--out", str(tmp_path / "video")]
        ) == 1


class TestRefine:
    def test_full_guidance_identity_round_trip(self, tmp_path):
        frames = write_frames(tmp_path, frames=3, size=8, full_masks=True)
        out = tmp_path / "refined"
        code = main(
            ["refine", str(frames), "--out", str(out), "--backend", "oracle:gaussian",
             "--steps", "25", "--t-guide", "25", "--resample", "3", "--r-guide", "3",
             "--seed", "5"]
        )
        assert code == 0
        for k in range(3):
            got = imageio.read_ppm(out / f"frame_{k:05d}.ppm")
            want = imageio.read_ppm(frames / f"frame_{k:05d}.ppm")
            np.testing.assert_array_equal(got, want)

    def test_manifest_replay_bitwise(self, tmp_path):
        frames = write_frames(tmp_path, frames=2, size=8, full_masks=False)
        first = tmp_path / "run1"
        code = main(
            ["refine", str(frames), "--out", str(first), "--backend", "oracle:gaussian",
             "--steps", "4", "--t-guide", "2", "--seed", "9"]
        )
        assert code == 0
        manifest = first / "manifest.json"
        assert manifest.exists()
        replay_a, replay_b = tmp_path / "runA", tmp_path / "runB"
        assert main(["refine", "--manifest", str(manifest), "--out", str(replay_a)]) == 0
        assert main(["refine", "--manifest", str(manifest), "--out", str(replay_b)]) == 0
        files_a = sorted(p.name for p in replay_a.iterdir())
        files_b = sorted(p.name for p in replay_b.iterdir())
        assert files_a == files_b and files_a
        for name in files_a:
            assert (replay_a / name).read_bytes() == (replay_b / name).read_bytes()
        # replays also match the original frames
        for name in files_a:
            assert (replay_a / name).read_bytes() == (first / name).read_bytes()

    def test_unseeded_run_records_seed(self, tmp_path):
        frames = write_frames(tmp_path, frames=2, size=8)
        out = tmp_path / "refined"
        assert main(
            ["refine", str(frames), "--out", str(out), "--steps", "2", "--t-guide", "0"]
        ) == 0
        doc = json.loads((out / "manifest.json").read_text())
        assert 0 <= doc["args"]["config"]["seed"] < 2**64

    def test_bridge_unreachable_gives_exit_3(self, tmp_path, monkeypatch):
        monkeypatch.setenv("VIEWX_BRIDGE_ADDR", "127.0.0.1:1")
        frames = write_frames(tmp_path, frames=2, size=8)
        assert main(
            ["refine", str(frames), "--out", str(tmp_path / "x"), "--backend", "bridge",
             "--steps", "2", "--t-guide", "0", "--seed", "1"]
        ) == 3

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    def test_divergence_gives_exit_4(self, tmp_path):
        # sigma_max at the float32 ceiling overflows the initial latent
        frames = write_frames(tmp_path, frames=2, size=8)
        assert main(
            ["refine", str(frames), "--out", str(tmp_path / "x"), "--steps", "2",
             "--t-guide", "0", "--seed", "1", "--sigma-max", "3e38"]
        ) == 4

    def test_dynamic_flag_sets_sixteen_guided_steps(self, tmp_path):
        frames = write_frames(tmp_path, frames=2, size=8)
        out = tmp_path / "refined"
        assert main(
            ["refine", str(frames), "--out", str(out), "--dynamic", "--steps", "16",
             "--seed", "3"]
        ) == 0
        doc = json.loads((out / "manifest.json").read_text())
        assert doc["args"]["config"]["guided_steps"] == 16

    def test_config_json_consumed(self, tmp_path):
        frames = write_frames(tmp_path, frames=2, size=8)
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"steps": 3, "guided_steps": 1, "seed": 12}))
        out = tmp_path / "refined"
        assert main(["refine", str(frames), "--out", str(out), "--config", str(config)]) == 0
        doc = json.loads((out / "manifest.json").read_text())
        assert doc["args"]["config"]["steps"] == 3


class TestDemoOracle:
    def test_errors_strictly_decrease(self, capsys):
        assert main(["demo-oracle", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        rows = [line.split() for line in out.splitlines() if line.strip() and line.split()[0].isdigit()]
        errs = [float(r[1]) for r in rows]
        assert len(errs) == 3
        assert errs[0] > errs[1] > errs[2]

    def test_fixed_seed_reproduces_table(self, capsys):
        main(["demo-oracle", "--seed", "4", "--steps", "1,25"])
        first = capsys.readouterr().out
        main(["demo-oracle", "--seed", "4", "--steps", "1,25"])
        second = capsys.readouterr().out
        assert first == second

    def test_single_step_has_largest_error(self, capsys):
        main(["demo-oracle", "--seed", "0", "--steps", "1,25,100"])
        out = capsys.readouterr().out
        rows = [line.split() for line in out.splitlines() if line.strip() and line.split()[0].isdigit()]
        errs = {int(r[0]): float(r[1]) for r in rows}
        assert errs[1] > errs[25] > errs[100]
