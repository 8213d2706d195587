"""Deterministic desk-scale physics: PBD deformables, rigid cubes, and a
pose-commanded kinematic gripper with ground-truth node observation."""

from .backend import BACKEND
from .world import (
    Attachment,
    DistanceConstraint,
    Gripper,
    RigidCube,
    SoftBody,
    World,
    build_cloth,
    build_rope,
    observe,
    reset,
    settle,
    step,
    world_from_json,
    world_to_json,
)

__all__ = [
    "BACKEND",
    "Attachment",
    "DistanceConstraint",
    "Gripper",
    "RigidCube",
    "SoftBody",
    "World",
    "build_cloth",
    "build_rope",
    "observe",
    "reset",
    "settle",
    "step",
    "world_from_json",
    "world_to_json",
]
