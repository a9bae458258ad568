"""Exercises the worldseed command-line interface and its exit codes."""

import json

import numpy as np
import pytest

from worldseed.camera import Camera, CameraIntrinsics, CameraPose
from worldseed.cli import main
from worldseed.io import read_image_png, write_image_png
from worldseed.scenes import two_planes


def write_input(path, size=32):
    scene = two_planes()
    intr = CameraIntrinsics.default(size, size)
    frame = scene.render_rgbd(Camera(intr, CameraPose.identity()))
    write_image_png(path, frame.image)


def write_config(path, image, out_dir, **overrides):
    cfg = {"image": str(image), "n_steps": 1, "m_views": 1,
           "angle_span": float(np.pi / 8), "holdout_views": 2,
           "train": {"iterations": 5, "seed": 0}, "seed": 0,
           "out_dir": str(out_dir)}
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    """One tiny CLI run whose artifacts the render/eval tests reuse."""
    root = tmp_path_factory.mktemp("cli")
    image = root / "in.png"
    write_input(image)
    out = root / "out"
    config = write_config(root / "cfg.json", image, out)
    code = main(["run", "--config", str(config)])
    assert code == 0
    return {"root": root, "out": out, "config": config}


class TestRunCommand:
    def test_successful_run_prints_metrics(self, finished_run, capsys):
        # The module fixture already ran; run again into a fresh directory
        # to capture this test's own stdout.
        out = finished_run["root"] / "out2"
        code = main(["run", "--config", str(finished_run["config"]),
                     "--out", str(out)])
        captured = capsys.readouterr()
        assert code == 0
        assert "train_psnr" in captured.out
        assert (out / "report.json").exists()

    def test_seed_override_changes_report(self, finished_run):
        out_dir = finished_run["root"] / "out_seed"
        code = main(["run", "--config", str(finished_run["config"]),
                     "--out", str(out_dir), "--seed", "99"])
        assert code == 0
        ours = json.loads((out_dir / "report.json").read_text())
        theirs = json.loads(
            (finished_run["out"] / "report.json").read_text())
        assert ours["metrics"] != theirs["metrics"]

    def test_missing_config_exits_2(self, tmp_path, capsys):
        code = main(["run", "--config", str(tmp_path / "none.json")])
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_malformed_json_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{oops")
        assert main(["run", "--config", str(bad)]) == 2

    def test_unknown_key_exits_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"image": "x.png", "stepz": 3}))
        assert main(["run", "--config", str(bad)]) == 2

    def test_unreachable_sidecar_exits_3(self, tmp_path, capsys):
        image = tmp_path / "in.png"
        write_input(image)
        config = write_config(tmp_path / "cfg.json", image,
                              tmp_path / "out",
                              backend={"kind": "remote",
                                       "url": "http://127.0.0.1:9",
                                       "timeout": 0.2})
        code = main(["run", "--config", str(config)])
        assert code == 3
        assert "backend error" in capsys.readouterr().err

    def test_sidecar_flag_overrides_backend(self, tmp_path):
        image = tmp_path / "in.png"
        write_input(image)
        config = write_config(tmp_path / "cfg.json", image, tmp_path / "out")
        code = main(["run", "--config", str(config),
                     "--sidecar", "http://127.0.0.1:9"])
        assert code == 3

    def test_divergent_training_exits_4(self, tmp_path, capsys):
        image = tmp_path / "in.png"
        write_input(image, size=24)
        config = write_config(
            tmp_path / "cfg.json", image, tmp_path / "out",
            m_views=0, holdout_views=0,
            train={"iterations": 150, "lr_color": 1e5, "seed": 0})
        code = main(["run", "--config", str(config)])
        assert code == 4
        assert "diverged" in capsys.readouterr().err


class TestRenderCommand:
    def test_renders_saved_pose(self, finished_run, tmp_path):
        out_png = tmp_path / "render.png"
        code = main(["render",
                     "--scene", str(finished_run["out"] / "scene.ckpt"),
                     "--pose", str(finished_run["out"] / "pose_1.json"),
                     "--out", str(out_png)])
        assert code == 0
        image = read_image_png(out_png)
        assert image.shape == (32, 32, 3)
        assert image.max() > 0.0

    def test_bad_checkpoint_exits_2(self, tmp_path):
        fake = tmp_path / "scene.ckpt"
        fake.write_bytes(b"not a checkpoint at all")
        pose = tmp_path / "pose.json"
        pose.write_text(json.dumps({"rotation": np.eye(3).tolist(),
                                    "translation": [0, 0, 0]}))
        assert main(["render", "--scene", str(fake),
                     "--pose", str(pose)]) == 2

    def test_bad_pose_exits_2(self, finished_run, tmp_path):
        pose = tmp_path / "pose.json"
        pose.write_text(json.dumps({"rotation": [[1, 0], [0, 1]]}))
        assert main(["render",
                     "--scene", str(finished_run["out"] / "scene.ckpt"),
                     "--pose", str(pose)]) == 2


class TestEvalCommand:
    def test_scores_saved_views(self, finished_run, capsys):
        code = main(["eval",
                     "--scene", str(finished_run["out"] / "scene.ckpt"),
                     "--views", str(finished_run["out"])])
        captured = capsys.readouterr()
        assert code == 0
        metrics = json.loads(captured.out)
        assert "mean_psnr" in metrics
        assert len(metrics["psnr"]) == 2

    def test_empty_views_directory_exits_2(self, finished_run, tmp_path):
        assert main(["eval",
                     "--scene", str(finished_run["out"] / "scene.ckpt"),
                     "--views", str(tmp_path)]) == 2


class TestParser:
    def test_no_command_is_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 2

    def test_unknown_command_is_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main(["destroy"])
        assert info.value.code == 2
