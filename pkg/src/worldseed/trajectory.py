"""Camera pose sequences for scene construction and splat training.

Three preset kinds:
  * ``orbit``: circle about a look-at point, every pose aimed at it,
    counterclockwise when the scene is viewed with the vertical axis up.
  * ``dolly_back``: straight pull-back along the input view direction with
    fixed orientation; ``radius`` is the total travel distance.
  * ``lateral_arc``: same circle as ``orbit`` but keeping the input
    orientation (a sideways strafe).

Pose 0 of a construction trajectory is always the input pose itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraPose

KINDS = ("orbit", "dolly_back", "lateral_arc")

DEFAULT_N_STEPS = 8
DEFAULT_ANGLE_SPAN = np.pi / 2
DEFAULT_RADIUS = 0.3
RADIUS_JITTER = 0.1


@dataclass(frozen=True)
class TrajectoryPreset:
    kind: str = "orbit"
    n_steps: int = DEFAULT_N_STEPS
    angle_span: float = DEFAULT_ANGLE_SPAN
    radius: float = DEFAULT_RADIUS
    look_at: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if not 0 < self.angle_span <= 2 * np.pi:
            raise ValueError("angle_span must lie in (0, 2*pi]")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.look_at is not None:
            at = np.asarray(self.look_at, dtype=np.float64)
            if at.shape != (3,):
                raise ValueError("look_at must be a 3-vector")
            object.__setattr__(self, "look_at", tuple(at))


def _vertical_rotation(theta: float) -> np.ndarray:
    """Rotation about the world up axis (0,-1,0), right-hand rule, so the
    motion appears counterclockwise when up is plotted up."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def resolve_look_at(preset: TrajectoryPreset, input_pose: CameraPose) -> np.ndarray:
    """Preset look-at point, or one radius ahead of the input camera so the
    input pose itself sits on the orbit circle."""
    if preset.look_at is not None:
        return np.asarray(preset.look_at, dtype=np.float64)
    return input_pose.center + preset.radius * input_pose.forward


def _pose_at(preset: TrajectoryPreset, input_pose: CameraPose, look_at,
             theta: float, radius: float) -> CameraPose:
    if preset.kind == "dolly_back":
        # theta reinterpreted as travel fraction of the span.
        travel = radius * theta / preset.angle_span
        center = input_pose.center - travel * input_pose.forward
        return CameraPose(input_pose.rotation,
                          -input_pose.rotation @ center)
    direction = input_pose.center - look_at
    norm = np.linalg.norm(direction)
    direction = direction / norm if norm > 0 else np.array([0.0, 0.0, -1.0])
    center = look_at + radius * (_vertical_rotation(theta) @ direction)
    if preset.kind == "lateral_arc":
        return CameraPose(input_pose.rotation,
                          -input_pose.rotation @ center)
    return CameraPose.look_at(center, look_at)


def construction_poses(preset: TrajectoryPreset,
                       input_pose: CameraPose | None = None):
    """The length n_steps+1 trajectory; index 0 is the input pose exactly."""
    if input_pose is None:
        input_pose = CameraPose.identity()
    look_at = resolve_look_at(preset, input_pose)
    step = preset.angle_span / preset.n_steps
    poses = [input_pose]
    for k in range(1, preset.n_steps + 1):
        poses.append(_pose_at(preset, input_pose, look_at, k * step,
                              preset.radius))
    return poses


def training_poses(preset: TrajectoryPreset, m: int, seed: int,
                   input_pose: CameraPose | None = None):
    """M perturbed construction poses: cycle over the construction indices,
    jitter the angle within half a step and the radius within 10%."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if input_pose is None:
        input_pose = CameraPose.identity()
    look_at = resolve_look_at(preset, input_pose)
    step = preset.angle_span / preset.n_steps
    rng = np.random.default_rng(seed)
    poses = []
    for j in range(m):
        base = (j % (preset.n_steps + 1)) * step
        theta = base + rng.uniform(-step / 2, step / 2)
        radius = preset.radius * (1.0 + rng.uniform(-RADIUS_JITTER,
                                                    RADIUS_JITTER))
        poses.append(_pose_at(preset, input_pose, look_at, theta, radius))
    return poses
