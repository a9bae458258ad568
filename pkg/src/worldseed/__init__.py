"""Grow a 3D splat scene from a single image.

The pipeline lifts an RGBD frame into a point cloud, walks a camera
trajectory while inpainting newly revealed regions, aligns each batch of
new points to the existing geometry, and refines the merged cloud into
an anisotropic Gaussian splat scene with a differentiable rasterizer.
"""

from .backends import BackendError, BackendSuite
from .camera import Camera, CameraIntrinsics, CameraPose
from .geometry import RgbdFrame, WorldCloud, lift_rgbd, project_cloud
from .pipeline import (
    ConfigError,
    PipelineConfig,
    RunReport,
    ScenePipeline,
    evaluate,
    load_config,
    run,
)
from .splats import (
    DivergenceError,
    SplatScene,
    TrainConfig,
    TrainingView,
    load_checkpoint,
    masked_psnr,
    masked_ssim,
    optimize,
    rasterize,
    save_checkpoint,
)
from .trajectory import TrajectoryPreset, construction_poses, training_poses

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "BackendSuite",
    "Camera",
    "CameraIntrinsics",
    "CameraPose",
    "ConfigError",
    "DivergenceError",
    "PipelineConfig",
    "RgbdFrame",
    "RunReport",
    "ScenePipeline",
    "SplatScene",
    "TrainConfig",
    "TrainingView",
    "TrajectoryPreset",
    "WorldCloud",
    "construction_poses",
    "evaluate",
    "lift_rgbd",
    "load_checkpoint",
    "load_config",
    "masked_psnr",
    "masked_ssim",
    "optimize",
    "project_cloud",
    "rasterize",
    "run",
    "save_checkpoint",
    "training_poses",
]
