"""Trajectory adaptation through fitted warp fields.

Poses move as p -> f(p) with the rotation carried through the orthonormalized
field Jacobian, R -> orth(J_f(p) R), which preserves the local frame of the
end effector relative to the deforming object.  The constant-transform rigid
path used by the baseline lives here too, along with the interpolation bridge
that connects the robot's current pose to the start of an adapted segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import Pose, compose, interpolate_poses, orthonormalize
from .registration import DeformableConfig, WarpField


@dataclass(frozen=True)
class TimedAction:
    """End-effector target pose plus a binary gripper command at step t."""

    pose: Pose
    gripper: int  # 0 = open, 1 = closed
    t: int

    def __post_init__(self):
        if self.gripper not in (0, 1):
            raise ValueError(f"gripper command must be 0 or 1, got {self.gripper}")

    def to_json(self) -> dict:
        d = self.pose.to_json()
        return {"t": int(self.t), "p": d["p"], "q": d["q"], "g": int(self.gripper)}

    @staticmethod
    def from_json(obj: dict) -> "TimedAction":
        return TimedAction(Pose.from_quat(obj["p"], obj["q"]), int(obj["g"]), int(obj["t"]))


@dataclass(frozen=True)
class TrajectorySegment:
    """Ordered actions for one object-centric subtask."""

    actions: tuple[TimedAction, ...]
    subtask_index: int
    start_config: DeformableConfig

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        if not self.actions:
            raise ValueError("segment must be nonempty")

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class BridgePolicy:
    """Distance-proportional interpolation step count, clamped to a range."""

    step_m: float = 0.01
    min_steps: int = 5
    max_steps: int = 100

    def n_steps(self, a: Pose, b: Pose) -> int:
        dist = float(np.linalg.norm(b.position - a.position))
        return min(max(math.ceil(dist / self.step_m), self.min_steps), self.max_steps)


def eval_field(f: WarpField, x) -> np.ndarray:
    """f(x) = A x + b + sum_i w_i * ||x - c_i||."""
    return f(x)


def eval_jacobian(f: WarpField, x) -> np.ndarray:
    """Analytic Jacobian A + sum_i w_i (x - c_i)^T / max(||x - c_i||, eps)."""
    return f.jacobian(x)


def transform_pose(f: WarpField, p: Pose) -> Pose:
    pos = f(p.position)
    rot = orthonormalize(f.jacobian(p.position) @ p.rotation)
    return Pose(pos, rot)


def warp_segment(
    f: WarpField, seg: TrajectorySegment, target_config: DeformableConfig | None = None
) -> TrajectorySegment:
    """Pass every action pose through the field; gripper and timing unchanged."""
    actions = tuple(replace(a, pose=transform_pose(f, a.pose)) for a in seg.actions)
    return TrajectorySegment(actions, seg.subtask_index, target_config or seg.start_config)


def rigid_transform_segment(
    t: Pose, seg: TrajectorySegment, target_config: DeformableConfig | None = None
) -> TrajectorySegment:
    """Pre-multiply every pose by a constant transform (the rigid baseline)."""
    actions = tuple(replace(a, pose=compose(t, a.pose)) for a in seg.actions)
    return TrajectorySegment(actions, seg.subtask_index, target_config or seg.start_config)


def bridge(current: Pose, seg: TrajectorySegment, n_interp: int) -> TrajectorySegment:
    """Prepend an interpolated approach from `current` to the segment start.

    Bridging actions carry the gripper state of the segment's first action;
    step indices are reassigned from 0.
    """
    first = seg.actions[0]
    poses = interpolate_poses(current, first.pose, n_interp)
    actions = [TimedAction(p, first.gripper, i) for i, p in enumerate(poses)]
    offset = len(actions)
    actions.extend(replace(a, t=offset + i) for i, a in enumerate(seg.actions))
    return TrajectorySegment(tuple(actions), seg.subtask_index, seg.start_config)
