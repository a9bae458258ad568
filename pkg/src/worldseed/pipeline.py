"""Single-image scene construction, end to end.

``run`` drives the whole flow: depth-layer the input, lift it to a point
cloud, walk a camera trajectory that alternately reveals and inpaints new
content, align and merge each step's points, reproject extra training
views, fit a splat scene, and score it against held-out reprojections.
``ScenePipeline`` wraps the same flow behind a fit/params facade.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .alignment import apply_shift, extract_boundary, interpolate_shift, merge
from .backends import BackendError, BackendSuite, InpaintRequest
from .camera import Camera, CameraIntrinsics, CameraPose
from .geometry import RgbdFrame, lift_rgbd, project_cloud
from .io import (
    read_depth_png,
    read_image_png,
    read_mask_png,
    read_pfm,
    write_image_png,
    write_mask_png,
    write_ply,
)
from .layering import build_prompt, builtin_segment, decompose, normalize_depth
from .layering import (
    AREA_MAX_FRACTION,
    AREA_MIN_FRACTION,
    DEPTH_PERCENTILE,
    TAU_IOU,
)
from .scenes import PRESETS
from .splats import (
    SplatScene,
    TrainConfig,
    TrainingView,
    init_scene,
    masked_psnr,
    masked_ssim,
    optimize,
    rasterize,
    save_checkpoint,
)
from .trajectory import TrajectoryPreset, construction_poses, training_poses

HOLDOUT_SEED_OFFSET = 7919    # keeps holdout jitter disjoint from training


class ConfigError(ValueError):
    """The pipeline configuration is malformed or inconsistent."""


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one `run` needs; JSON-serializable via to_dict/from_dict."""

    image: str | None = None
    depth: str | None = None
    text: str | None = None
    backend: dict = field(default_factory=lambda: {"kind": "builtin"})
    builtin_scene: str = "two_planes"
    trajectory: str = "orbit"
    n_steps: int = 4
    m_views: int = 8
    angle_span: float = np.pi / 2
    radius: float = 0.3
    tau_iou: float = TAU_IOU
    a_min: float = AREA_MIN_FRACTION
    a_max: float = AREA_MAX_FRACTION
    depth_percentile: float = DEPTH_PERCENTILE
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "out"
    seed: int = 0
    holdout_views: int = 4
    workers: int = 1

    def __post_init__(self):
        if (self.image is None) == (self.text is None):
            raise ConfigError("exactly one of image or text must be set")
        if self.n_steps < 1:
            raise ConfigError("n_steps must be at least 1")
        if self.m_views < 0:
            raise ConfigError("m_views must not be negative")
        if self.holdout_views < 0:
            raise ConfigError("holdout_views must not be negative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if not 0.0 <= self.tau_iou <= 1.0:
            raise ConfigError("tau_iou must lie in [0, 1]")
        if not 0.0 <= self.a_min < self.a_max <= 1.0:
            raise ConfigError("area bounds need 0 <= a_min < a_max <= 1")
        if not 0.0 <= self.depth_percentile <= 1.0:
            raise ConfigError("depth_percentile must lie in [0, 1]")
        kind = dict(self.backend).get("kind", "builtin")
        if self.text is not None and kind == "builtin":
            raise ConfigError(
                "text input needs a remote image generator; builtin "
                "backends can only start from an image")
        if kind == "builtin" and self.builtin_scene not in PRESETS:
            raise ConfigError(
                f"unknown builtin scene {self.builtin_scene!r}; "
                f"choose from {sorted(PRESETS)}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["train"] = asdict(self.train)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "train" in data and not isinstance(data["train"], TrainConfig):
            train_data = dict(data["train"])
            train_known = {f.name for f in fields(TrainConfig)}
            bad = set(train_data) - train_known
            if bad:
                raise ConfigError(f"unknown train config keys: {sorted(bad)}")
            try:
                data["train"] = TrainConfig(**train_data)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path) -> PipelineConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    # Input files named by the config live next to it; out_dir stays
    # relative to the invocation directory.
    base = Path(path).resolve().parent
    for key in ("image", "depth"):
        value = data.get(key)
        if isinstance(value, str) and value and not Path(value).is_absolute():
            data[key] = str(base / value)
    return PipelineConfig.from_dict(data)


@dataclass(frozen=True)
class StepRecord:
    """What one trajectory step did to the cloud."""

    step: int
    inpainted_fraction: float
    band_size: int
    mean_shift_factor: float
    cloud_size: int

    def __post_init__(self):
        if not 0.0 <= self.inpainted_fraction <= 1.0:
            raise ValueError("inpainted_fraction must lie in [0, 1]")
        if self.band_size < 0 or self.cloud_size < 0:
            raise ValueError("counts must not be negative")


@dataclass(frozen=True)
class RunReport:
    steps: tuple
    metrics: dict
    timings: dict

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        sizes = [s.cloud_size for s in self.steps]
        if any(b < a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("cloud sizes must be non-decreasing")

    def to_dict(self) -> dict:
        return {"steps": [asdict(s) for s in self.steps],
                "metrics": dict(self.metrics),
                "timings": dict(self.timings)}

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        return cls(tuple(StepRecord(**s) for s in data["steps"]),
                   dict(data["metrics"]), dict(data["timings"]))


def evaluate(scene: SplatScene, holdout, n_workers: int = 1,
             window: int = 11, sigma: float = 1.5) -> dict:
    """Masked PSNR/SSIM of the scene's renders against each holdout view."""
    holdout = list(holdout)
    if not holdout:
        raise ValueError("holdout must contain at least one view")
    psnrs, ssims = [], []
    for view in holdout:
        render, _ = rasterize(scene, scene.intrinsics, view.pose,
                              n_workers=n_workers)
        psnrs.append(masked_psnr(render, view.image, view.mask))
        ssims.append(masked_ssim(render, view.image, view.mask, window,
                                 sigma))
    return {"psnr": psnrs, "ssim": ssims,
            "mean_psnr": float(np.mean(psnrs)),
            "mean_ssim": float(np.mean(ssims))}


def _load_depth(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return read_pfm(path)
    return read_depth_png(path)


def _write_pose(path, pose: CameraPose) -> None:
    Path(path).write_text(json.dumps(
        {"rotation": pose.rotation.tolist(),
         "translation": pose.translation.tolist()}, indent=2))


def read_pose(path) -> CameraPose:
    data = json.loads(Path(path).read_text())
    try:
        return CameraPose(np.asarray(data["rotation"], dtype=np.float64),
                          np.asarray(data["translation"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad pose file {path}: {exc}") from exc


def _guard(step: int, what: str, call):
    try:
        return call()
    except BackendError as exc:
        raise BackendError(f"step {step}: {what} failed: {exc}") from exc


def run(config: PipelineConfig) -> RunReport:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings = {}
    clock = time.monotonic()

    def lap(stage):
        nonlocal clock
        now = time.monotonic()
        timings[stage] = now - clock
        clock = now

    analytic = None
    backend_cfg = dict(config.backend)
    if backend_cfg.get("kind", "builtin") == "builtin":
        analytic = PRESETS[config.builtin_scene]()
    try:
        suite = BackendSuite.from_config(backend_cfg, scene=analytic)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    if config.image is None:
        raise ConfigError("text-to-image seeding requires a remote backend "
                          "that generates the first frame; provide an image")
    try:
        image_0 = read_image_png(config.image)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load input image: {exc}") from exc
    height, width = image_0.shape[:2]
    intrinsics = CameraIntrinsics.default(width, height)
    camera_0 = Camera(intrinsics, CameraPose.identity())
    if config.depth is not None:
        try:
            depth_0 = _load_depth(config.depth)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load input depth: {exc}") from exc
        if depth_0.shape != (height, width):
            raise ConfigError("input depth dimensions differ from the image")
    else:
        depth_0 = _guard(0, "depth estimation",
                         lambda: suite.depth_estimator.estimate(
                             image_0, camera=camera_0))
    lap("inputs")

    layers = decompose(depth_0, builtin_segment(depth_0), config.tau_iou,
                       config.a_min, config.a_max, config.depth_percentile)
    category, colors = _guard(0, "captioning",
                              lambda: suite.captioner.caption(image_0))
    prompt = build_prompt(category, colors)
    occlusion = layers.occlusion
    if occlusion.any() and not occlusion.all():
        request = InpaintRequest(image_0, ~occlusion, prompt,
                                 normalize_depth(depth_0))
        background = _guard(0, "background inpainting",
                            lambda: suite.inpainter.inpaint(request))
        write_image_png(out / "background.png", background)
    lap("layering")

    frame_0 = RgbdFrame(image_0, np.where(depth_0 > 0, depth_0, 0.0),
                        depth_0 > 0)
    cloud = lift_rgbd(frame_0, camera_0, origin_step=0)
    steps = [StepRecord(0, 0.0, 0, 1.0, len(cloud))]
    write_ply(out / "cloud_step_0.ply", cloud)
    write_image_png(out / "view_0.png", image_0)
    write_mask_png(out / "mask_0.png", frame_0.mask)
    _write_pose(out / "pose_0.json", camera_0.pose)

    preset = TrajectoryPreset(config.trajectory, config.n_steps,
                              config.angle_span, config.radius)
    poses = construction_poses(preset, input_pose=camera_0.pose)
    construction_views = [TrainingView(image_0,
                                       np.ones((height, width), dtype=bool),
                                       poses[0])]
    latest_complete = image_0
    for i in range(1, config.n_steps + 1):
        camera_i = Camera(intrinsics, poses[i])
        projected = project_cloud(cloud, camera_i)
        if not projected.mask.any():
            raise ConfigError(
                f"step {i} sees none of the existing cloud; the trajectory "
                "moves too far per step to inpaint from known content")
        fraction = float((~projected.mask).mean())
        band_size = 0
        mean_factor = 1.0
        if projected.mask.all():
            image_i = projected.image
        else:
            category, colors = _guard(
                i, "captioning",
                lambda: suite.captioner.caption(latest_complete))
            step_prompt = build_prompt(category, colors)
            request = InpaintRequest(projected.image, projected.mask,
                                     step_prompt,
                                     normalize_depth(projected.depth))
            image_i = _guard(i, "inpainting",
                             lambda: suite.inpainter.inpaint(request))
            depth_i = _guard(i, "depth estimation",
                             lambda: suite.depth_estimator.estimate(
                                 image_i, camera=camera_i,
                                 hint=projected.depth))
            frame_i = RgbdFrame(image_i, np.where(depth_i > 0, depth_i, 0.0),
                                depth_i > 0)
            select = ~projected.mask & frame_i.mask
            if select.any():
                new_points = lift_rgbd(frame_i, camera_i, select=select,
                                       origin_step=i)
                band = extract_boundary(projected.mask, projected.depth,
                                        frame_i.depth)
                if len(band) > 0:
                    shift = interpolate_shift(band, ~projected.mask)
                    new_points = apply_shift(new_points, shift, intrinsics,
                                             poses[i])
                    band_size = len(band)
                    mean_factor = float(band.factors.mean())
                cloud = merge(cloud, new_points)
        write_ply(out / f"cloud_step_{i}.ply", cloud)
        write_image_png(out / f"view_{i}.png", image_i)
        write_mask_png(out / f"mask_{i}.png", projected.mask)
        _write_pose(out / f"pose_{i}.json", poses[i])
        steps.append(StepRecord(i, fraction, band_size, mean_factor,
                                len(cloud)))
        construction_views.append(TrainingView(
            image_i, np.ones((height, width), dtype=bool), poses[i]))
        latest_complete = image_i
    lap("construction")

    views = list(construction_views)
    if config.m_views > 0:
        extra_poses = training_poses(preset, config.m_views, config.seed,
                                     input_pose=camera_0.pose)
        for pose in extra_poses:
            projected = project_cloud(cloud, Camera(intrinsics, pose))
            if projected.mask.any():
                views.append(TrainingView(projected.image, projected.mask,
                                          pose))
    lap("reprojection")

    scene = init_scene(cloud, intrinsics, views=tuple(views))
    trained = optimize(scene, config.train)
    save_checkpoint(out / "scene.ckpt", trained)
    lap("training")

    train_metrics = evaluate(trained, views, n_workers=config.workers,
                             window=config.train.ssim_window,
                             sigma=config.train.ssim_sigma)
    metrics = {"train_psnr": train_metrics["mean_psnr"],
               "train_ssim": train_metrics["mean_ssim"]}
    if config.holdout_views > 0:
        holdout_poses = training_poses(
            preset, config.holdout_views,
            config.seed + HOLDOUT_SEED_OFFSET, input_pose=camera_0.pose)
        holdout = []
        for j, pose in enumerate(holdout_poses):
            projected = project_cloud(cloud, Camera(intrinsics, pose))
            if not projected.mask.any():
                continue
            view = TrainingView(projected.image, projected.mask, pose)
            holdout.append(view)
            write_image_png(out / f"eval_view_{j}.png", view.image)
            write_mask_png(out / f"eval_mask_{j}.png", view.mask)
            _write_pose(out / f"eval_pose_{j}.json", pose)
        if holdout:
            held = evaluate(trained, holdout, n_workers=config.workers,
                            window=config.train.ssim_window,
                            sigma=config.train.ssim_sigma)
            metrics["holdout_psnr"] = held["mean_psnr"]
            metrics["holdout_ssim"] = held["mean_ssim"]
    lap("evaluation")

    report = RunReport(tuple(steps), metrics, timings)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    return report


def load_views(directory) -> list:
    """Read the eval_{view,mask,pose}_j artifacts written by ``run``."""
    directory = Path(directory)
    views = []
    for image_path in sorted(directory.glob("eval_view_*.png")):
        stem = image_path.stem.replace("eval_view_", "")
        mask_path = directory / f"eval_mask_{stem}.png"
        pose_path = directory / f"eval_pose_{stem}.json"
        if not (mask_path.exists() and pose_path.exists()):
            raise ConfigError(f"view {image_path} is missing its mask or "
                              "pose file")
        views.append(TrainingView(read_image_png(image_path),
                                  read_mask_png(mask_path),
                                  read_pose(pose_path)))
    if not views:
        raise ConfigError(f"no eval_view_*.png files under {directory}")
    return views


class ScenePipeline:
    """Estimator-style facade: configure once, ``fit`` on an input image.

    After fitting, ``report_`` holds the RunReport, ``scene_`` the trained
    splats; ``predict`` renders poses with the trained scene.
    """

    def __init__(self, n_steps=4, m_views=8, trajectory="orbit",
                 angle_span=np.pi / 2, radius=0.3, backend=None,
                 builtin_scene="two_planes", tau_iou=TAU_IOU,
                 a_min=AREA_MIN_FRACTION, a_max=AREA_MAX_FRACTION,
                 depth_percentile=DEPTH_PERCENTILE, train=None,
                 out_dir="out", seed=0, holdout_views=4, workers=1):
        self.n_steps = n_steps
        self.m_views = m_views
        self.trajectory = trajectory
        self.angle_span = angle_span
        self.radius = radius
        self.backend = backend
        self.builtin_scene = builtin_scene
        self.tau_iou = tau_iou
        self.a_min = a_min
        self.a_max = a_max
        self.depth_percentile = depth_percentile
        self.train = train
        self.out_dir = out_dir
        self.seed = seed
        self.holdout_views = holdout_views
        self.workers = workers

    _param_names = ("n_steps", "m_views", "trajectory", "angle_span",
                    "radius", "backend", "builtin_scene", "tau_iou", "a_min",
                    "a_max", "depth_percentile", "train", "out_dir", "seed",
                    "holdout_views", "workers")

    def get_params(self, deep=True) -> dict:
        return {name: getattr(self, name) for name in self._param_names}

    def set_params(self, **params) -> "ScenePipeline":
        for name, value in params.items():
            if name not in self._param_names:
                raise ValueError(f"unknown parameter {name!r}")
            setattr(self, name, value)
        return self

    def _config(self, image, depth, text) -> PipelineConfig:
        return PipelineConfig(
            image=image, depth=depth, text=text,
            backend=self.backend or {"kind": "builtin"},
            builtin_scene=self.builtin_scene, trajectory=self.trajectory,
            n_steps=self.n_steps, m_views=self.m_views,
            angle_span=self.angle_span, radius=self.radius,
            tau_iou=self.tau_iou, a_min=self.a_min, a_max=self.a_max,
            depth_percentile=self.depth_percentile,
            train=self.train or TrainConfig(), out_dir=self.out_dir,
            seed=self.seed, holdout_views=self.holdout_views,
            workers=self.workers)

    def fit(self, image, depth=None, text=None) -> "ScenePipeline":
        from .splats import load_checkpoint
        self.report_ = run(self._config(image, depth, text))
        self.scene_ = load_checkpoint(Path(self.out_dir) / "scene.ckpt")
        return self

    def predict(self, poses) -> list:
        if not hasattr(self, "scene_"):
            raise RuntimeError("call fit before predict")
        renders = []
        for pose in poses:
            image, _ = rasterize(self.scene_, self.scene_.intrinsics, pose,
                                 n_workers=self.workers)
            renders.append(image)
        return renders

    def score(self, views=None) -> float:
        if not hasattr(self, "scene_"):
            raise RuntimeError("call fit before score")
        if views is None:
            return self.report_.metrics.get(
                "holdout_psnr", self.report_.metrics["train_psnr"])
        return evaluate(self.scene_, views, n_workers=self.workers)[
            "mean_psnr"]
