"""End-to-end pipeline tests on synthetic scenes with builtin backends."""

import json

import numpy as np
import pytest

from worldseed.backends import BackendError
from worldseed.camera import Camera, CameraIntrinsics, CameraPose
from worldseed.io import read_mask_png, read_ply, write_depth_png, \
    write_image_png
from worldseed.pipeline import (
    ConfigError,
    PipelineConfig,
    RunReport,
    ScenePipeline,
    StepRecord,
    evaluate,
    load_config,
    load_views,
    read_pose,
    run,
)
from worldseed.scenes import two_planes
from worldseed.splats import TrainConfig, TrainingView, rasterize
from worldseed.splats import SplatScene


def render_input(path, size=40):
    scene = two_planes()
    intr = CameraIntrinsics.default(size, size)
    frame = scene.render_rgbd(Camera(intr, CameraPose.identity()))
    write_image_png(path, frame.image)
    return frame


def small_config(image_path, out_dir, **overrides):
    base = dict(image=str(image_path), n_steps=2, m_views=2,
                train=TrainConfig(iterations=15, seed=0),
                out_dir=str(out_dir), seed=0, holdout_views=2)
    base.update(overrides)
    return PipelineConfig(**base)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    """One small pipeline run plus an identical rerun, shared by tests."""
    root = tmp_path_factory.mktemp("pipeline")
    image = root / "input.png"
    render_input(image)
    first = run(small_config(image, root / "out_a"))
    second = run(small_config(image, root / "out_b"))
    return {"root": root, "image": image, "first": first, "second": second,
            "out_a": root / "out_a", "out_b": root / "out_b"}


class TestConfig:
    def test_dict_round_trip(self):
        cfg = PipelineConfig(image="a.png", n_steps=3, m_views=5, seed=11,
                             train=TrainConfig(iterations=7))
        assert PipelineConfig.from_dict(cfg.to_dict()) == cfg

    def test_json_file_round_trip(self, tmp_path):
        cfg = PipelineConfig(image=str(tmp_path / "a.png"), n_steps=2,
                             train=TrainConfig(iterations=9, seed=4))
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()))
        assert load_config(path) == cfg

    def test_relative_input_paths_resolve_against_config(self, tmp_path):
        nested = tmp_path / "cfgs"
        nested.mkdir()
        (nested / "run.json").write_text(json.dumps(
            {"image": "in.png", "depth": "d.png", "out_dir": "out"}))
        cfg = load_config(nested / "run.json")
        assert cfg.image == str(nested / "in.png")
        assert cfg.depth == str(nested / "d.png")
        assert cfg.out_dir == "out"

    def test_rejects_unknown_keys(self):
        with pytest.raises(ConfigError, match="unknown config"):
            PipelineConfig.from_dict({"image": "a.png", "nsteps": 3})

    def test_rejects_unknown_train_keys(self):
        with pytest.raises(ConfigError, match="unknown train"):
            PipelineConfig.from_dict({"image": "a.png",
                                      "train": {"iteration": 5}})

    def test_requires_exactly_one_seed_input(self):
        with pytest.raises(ConfigError, match="exactly one"):
            PipelineConfig(image="a.png", text="a beach")
        with pytest.raises(ConfigError, match="exactly one"):
            PipelineConfig()

    def test_text_with_builtin_backend_rejected(self):
        with pytest.raises(ConfigError, match="remote"):
            PipelineConfig(text="a beach at sunset")

    def test_text_with_remote_backend_accepted(self):
        cfg = PipelineConfig(text="a beach at sunset",
                             backend={"kind": "remote",
                                      "url": "http://127.0.0.1:9"})
        assert cfg.text == "a beach at sunset"

    def test_rejects_bad_counts_and_thresholds(self):
        with pytest.raises(ConfigError, match="n_steps"):
            PipelineConfig(image="a.png", n_steps=0)
        with pytest.raises(ConfigError, match="m_views"):
            PipelineConfig(image="a.png", m_views=-1)
        with pytest.raises(ConfigError, match="tau_iou"):
            PipelineConfig(image="a.png", tau_iou=1.5)
        with pytest.raises(ConfigError, match="a_min"):
            PipelineConfig(image="a.png", a_min=0.7, a_max=0.6)
        with pytest.raises(ConfigError, match="depth_percentile"):
            PipelineConfig(image="a.png", depth_percentile=-0.1)

    def test_rejects_unknown_builtin_scene(self):
        with pytest.raises(ConfigError, match="builtin scene"):
            PipelineConfig(image="a.png", builtin_scene="atlantis")

    def test_rejects_invalid_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="JSON"):
            load_config(path)


class TestReportTypes:
    def test_step_record_rejects_bad_fraction(self):
        with pytest.raises(ValueError, match="fraction"):
            StepRecord(1, 1.5, 0, 1.0, 10)

    def test_report_rejects_shrinking_cloud(self):
        steps = (StepRecord(0, 0.0, 0, 1.0, 100),
                 StepRecord(1, 0.1, 5, 1.0, 90))
        with pytest.raises(ValueError, match="non-decreasing"):
            RunReport(steps, {}, {})

    def test_report_dict_round_trip(self):
        steps = (StepRecord(0, 0.0, 0, 1.0, 100),
                 StepRecord(1, 0.25, 12, 1.03, 160))
        report = RunReport(steps, {"train_psnr": 30.5}, {"training": 1.5})
        again = RunReport.from_dict(report.to_dict())
        assert again.steps == report.steps
        assert again.metrics == report.metrics
        assert again.timings == report.timings


def flat_splat_scene(color, size=16):
    """One huge near-opaque splat: renders ~color everywhere."""
    intr = CameraIntrinsics.default(size, size)
    return SplatScene(intr, np.array([[0.0, 0.0, 1.0]]),
                      np.full((1, 3), np.log(200 / (0.8 * size))),
                      np.array([[1.0, 0.0, 0.0, 0.0]]), np.array([9.0]),
                      np.array([color]))


class TestEvaluate:
    def test_requires_views(self):
        scene = flat_splat_scene([0.5, 0.5, 0.5])
        with pytest.raises(ValueError, match="at least one"):
            evaluate(scene, [])

    def test_self_render_saturates(self):
        scene = flat_splat_scene([0.4, 0.5, 0.6])
        render, _ = rasterize(scene, scene.intrinsics, CameraPose.identity())
        view = TrainingView(render, np.ones(render.shape[:2], dtype=bool),
                            CameraPose.identity())
        metrics = evaluate(scene, [view])
        assert metrics["psnr"] == [99.0]
        assert metrics["ssim"] == [1.0]
        assert metrics["mean_psnr"] == 99.0

    def test_uniform_error_is_twenty_db(self):
        scene = flat_splat_scene([0.3, 0.3, 0.3])
        render, _ = rasterize(scene, scene.intrinsics, CameraPose.identity())
        target = render + 0.1
        assert target.max() <= 1.0
        view = TrainingView(target, np.ones(render.shape[:2], dtype=bool),
                            CameraPose.identity())
        metrics = evaluate(scene, [view])
        assert metrics["mean_psnr"] == pytest.approx(20.0, abs=1e-9)

    def test_psnr_matches_plain_formula(self, rng):
        scene = flat_splat_scene([0.5, 0.4, 0.3])
        render, _ = rasterize(scene, scene.intrinsics, CameraPose.identity())
        target = np.clip(render + rng.uniform(-0.2, 0.2, render.shape), 0, 1)
        view = TrainingView(target, np.ones(render.shape[:2], dtype=bool),
                            CameraPose.identity())
        metrics = evaluate(scene, [view])
        expected = -10.0 * np.log10(np.mean((render - target) ** 2))
        assert abs(metrics["mean_psnr"] - expected) < 1e-6


class TestRun:
    def test_writes_expected_artifacts(self, small_run):
        out = small_run["out_a"]
        for i in range(3):
            assert (out / f"cloud_step_{i}.ply").exists()
            assert (out / f"view_{i}.png").exists()
            assert (out / f"mask_{i}.png").exists()
            assert (out / f"pose_{i}.json").exists()
        assert (out / "scene.ckpt").exists()
        assert (out / "report.json").exists()
        assert (out / "eval_view_0.png").exists()

    def test_cloud_growth_matches_ply_artifacts(self, small_run):
        report = small_run["first"]
        out = small_run["out_a"]
        sizes = [s.cloud_size for s in report.steps]
        assert sizes == sorted(sizes)
        for i, size in enumerate(sizes):
            assert len(read_ply(out / f"cloud_step_{i}.ply")) == size

    def test_cloud_grows_on_inpainted_steps(self, small_run):
        for prev, step in zip(small_run["first"].steps,
                              small_run["first"].steps[1:]):
            if step.inpainted_fraction > 0:
                assert step.cloud_size > prev.cloud_size

    def test_report_json_round_trips(self, small_run):
        data = json.loads((small_run["out_a"] / "report.json").read_text())
        report = RunReport.from_dict(data)
        assert report.steps == small_run["first"].steps
        assert report.metrics == small_run["first"].metrics

    def test_same_seed_reproduces_metrics_bit_exactly(self, small_run):
        assert small_run["first"].metrics == small_run["second"].metrics
        assert small_run["first"].steps == small_run["second"].steps

    def test_new_points_come_only_from_unknown_pixels(self, small_run):
        out = small_run["out_a"]
        report = small_run["first"]
        before = report.steps[0].cloud_size
        cloud = read_ply(out / "cloud_step_1.ply")
        new_pts = cloud.positions[before:]
        mask = read_mask_png(out / "mask_1.png")
        pose = read_pose(out / "pose_1.json")
        intr = CameraIntrinsics.default(*mask.shape[::-1])
        cam_pts = pose.to_camera(new_pts)
        u = np.rint(intr.fx * cam_pts[:, 0] / cam_pts[:, 2] + intr.cx)
        v = np.rint(intr.fy * cam_pts[:, 1] / cam_pts[:, 2] + intr.cy)
        assert not mask[v.astype(int), u.astype(int)].any()

    def test_metrics_present(self, small_run):
        metrics = small_run["first"].metrics
        for key in ("train_psnr", "train_ssim", "holdout_psnr",
                    "holdout_ssim"):
            assert key in metrics
            assert np.isfinite(metrics[key])

    def test_stationary_trajectory_is_a_no_op(self, tmp_path):
        image = tmp_path / "in.png"
        render_input(image, size=32)
        cfg = small_config(image, tmp_path / "out", n_steps=1, m_views=0,
                           holdout_views=0, angle_span=1e-9,
                           train=TrainConfig(iterations=5, seed=0))
        report = run(cfg)
        assert report.steps[1].inpainted_fraction == 0.0
        assert report.steps[1].cloud_size == report.steps[0].cloud_size
        assert report.steps[1].band_size == 0

    def test_provided_depth_is_used(self, tmp_path):
        image = tmp_path / "in.png"
        frame = render_input(image, size=32)
        depth_path = tmp_path / "in_depth.png"
        write_depth_png(depth_path, frame.depth)
        cfg = small_config(image, tmp_path / "out", n_steps=1, m_views=0,
                           holdout_views=0, depth=str(depth_path),
                           angle_span=np.pi / 8,
                           train=TrainConfig(iterations=5, seed=0))
        report = run(cfg)
        assert report.steps[0].cloud_size == 32 * 32

    def test_depth_shape_mismatch_rejected(self, tmp_path):
        image = tmp_path / "in.png"
        render_input(image, size=32)
        depth_path = tmp_path / "in_depth.png"
        write_depth_png(depth_path, np.full((16, 16), 2.0))
        cfg = small_config(image, tmp_path / "out", depth=str(depth_path))
        with pytest.raises(ConfigError, match="dimensions"):
            run(cfg)

    def test_missing_image_rejected(self, tmp_path):
        cfg = small_config(tmp_path / "absent.png", tmp_path / "out")
        with pytest.raises(ConfigError, match="input image"):
            run(cfg)

    def test_unreachable_backend_reports_step(self, tmp_path):
        image = tmp_path / "in.png"
        render_input(image, size=32)
        cfg = small_config(image, tmp_path / "out",
                           backend={"kind": "remote",
                                    "url": "http://127.0.0.1:9",
                                    "timeout": 0.2})
        with pytest.raises(BackendError, match="step 0"):
            run(cfg)

    def test_runaway_trajectory_rejected(self, tmp_path):
        image = tmp_path / "in.png"
        render_input(image, size=32)
        cfg = small_config(image, tmp_path / "out", trajectory="lateral_arc",
                           radius=1e3)
        with pytest.raises(ConfigError, match="sees none"):
            run(cfg)

    def test_load_views_reads_eval_artifacts(self, small_run):
        views = load_views(small_run["out_a"])
        assert len(views) == 2
        assert views[0].image.shape == (40, 40, 3)
        assert views[0].mask.any()

    def test_load_views_rejects_empty_directory(self, tmp_path):
        with pytest.raises(ConfigError, match="eval_view"):
            load_views(tmp_path)


class TestScenePipeline:
    def test_params_round_trip(self):
        est = ScenePipeline(n_steps=3, seed=5)
        params = est.get_params()
        assert params["n_steps"] == 3
        assert params["seed"] == 5
        est.set_params(n_steps=7, m_views=1)
        assert est.get_params()["n_steps"] == 7
        assert est.get_params()["m_views"] == 1

    def test_set_params_rejects_unknown(self):
        with pytest.raises(ValueError, match="unknown parameter"):
            ScenePipeline().set_params(gamma=2.0)

    def test_fit_predict_score(self, tmp_path):
        image = tmp_path / "in.png"
        render_input(image, size=32)
        est = ScenePipeline(n_steps=1, m_views=0, holdout_views=2,
                            angle_span=np.pi / 8,
                            train=TrainConfig(iterations=5, seed=0),
                            out_dir=str(tmp_path / "out"), seed=0)
        est.fit(str(image))
        assert est.report_.metrics["train_psnr"] > 0
        renders = est.predict([CameraPose.identity()])
        assert renders[0].shape == (32, 32, 3)
        assert np.isfinite(est.score())

    def test_predict_before_fit_raises(self):
        with pytest.raises(RuntimeError, match="fit"):
            ScenePipeline().predict([CameraPose.identity()])
