"""Desk-scale tasks: initial-state samplers, success predicates, and the
scripted source demonstrations that stand in for teleoperation.

Three built-ins:
  rope_u     - drag one end of a 20-node rope so both ends meet
  towel_fold - fold a 10x10 towel in half and retract
  cube_stack - pick one cube and place it on another

All thresholds and randomization ranges live in TaskSpec parameter dicts,
not in code, and every sampler is a pure function of its seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .demos import SourceDemo, segment_boundaries
from .errors import ScriptFailed
from .geometry import Pose, interpolate_poses, rot_z
from .simulator import Gripper, World, build_cloth, build_rope, observe, settle, step
from .simulator.world import RigidCube
from .warp import TimedAction

SCHEMA = "softgen/v1"
POST_SETTLE_STEPS = 100  # settling before success predicates are evaluated


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    family: str
    subtask_objects: tuple[str, ...]
    builder: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    success: dict = field(default_factory=dict)
    source_script: dict = field(default_factory=dict)

    def build_world(self, seed: int, canonical: bool = False) -> World:
        return _FAMILIES[self.family].build(self, int(seed), canonical)

    def success_fn(self, world: World) -> bool:
        return _FAMILIES[self.family].success(self, world)

    def script_legs(self, world: World) -> list:
        return _FAMILIES[self.family].script(self, world)

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA,
            "kind": "task",
            "task_id": self.task_id,
            "family": self.family,
            "subtask_objects": list(self.subtask_objects),
            "builder": self.builder,
            "sampler": self.sampler,
            "success": self.success,
            "source_script": self.source_script,
        }

    @staticmethod
    def from_json(obj: dict) -> "TaskSpec":
        if obj.get("schema") != SCHEMA or obj.get("kind") != "task":
            raise ValueError("not a softgen task spec")
        return TaskSpec(
            task_id=obj["task_id"],
            family=obj["family"],
            subtask_objects=tuple(obj["subtask_objects"]),
            builder=obj.get("builder", {}),
            sampler=obj.get("sampler", {}),
            success=obj.get("success", {}),
            source_script=obj.get("source_script", {}),
        )


@dataclass(frozen=True)
class _Family:
    build: callable
    success: callable
    script: callable


def _home_pose(spec: TaskSpec) -> Pose:
    p = spec.builder["gripper_home"]
    return Pose.from_quat(p["p"], p["q"])


def _make_world(spec: TaskSpec, bodies: dict, seed: int) -> World:
    return World(
        bodies=bodies,
        gripper=Gripper(
            _home_pose(spec),
            attach_radius=spec.builder.get("attach_radius", 0.015),
            max_grab=spec.builder.get("max_grab", 3),
        ),
        dt=spec.builder.get("dt", 0.01),
        solver_iters=spec.builder.get("solver_iters", 10),
        damping=spec.builder.get("damping", 0.02),
        friction_mu=spec.builder.get("friction_mu", 0.8),
        rng_seed=seed,
    )


# ---------------------------------------------------------------- rope_u


def _rope_build(spec: TaskSpec, seed: int, canonical: bool) -> World:
    b, s = spec.builder, spec.sampler
    rng = np.random.default_rng(seed)
    n = b["n_nodes"]
    spacing = b["spacing"]
    if canonical:
        theta = 0.0
        amp = s["canonical_wave_amp"]
    else:
        theta = math.radians(rng.uniform(-s["bend_max_deg"], s["bend_max_deg"]))
        amp = s["wave_amp"]
    # lay the chain link by link: exact rest lengths, one half straight, the
    # other bent by theta at the midpoint, plus smooth low-frequency heading
    # waves (a settled rope has smooth curvature, and smooth profiles keep
    # the registration well conditioned)
    mid = n // 2
    t = np.arange(n - 1) / (n - 2)
    headings = np.zeros(n - 1)
    for mode in (1, 2):
        a = rng.normal(0.0, amp / mode)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        headings += a * np.sin(math.pi * mode * t + phase)
    headings[mid:] += theta
    nodes = np.zeros((n, 3))
    nodes[0] = np.asarray(b["start"], dtype=float)
    for i in range(n - 1):
        nodes[i + 1] = nodes[i] + spacing * np.array(
            [math.cos(headings[i]), math.sin(headings[i]), 0.0]
        )
    body = build_rope(
        n_nodes=n,
        spacing=spacing,
        node_mass=b.get("node_mass", 0.01),
        stretch_stiffness=b.get("stretch_stiffness", 0.9),
    )
    body.nodes[:] = nodes
    world = _make_world(spec, {"rope": body}, seed)
    settle(world, b.get("settle_steps", 200))
    world.step_count = 0
    return world


def _rope_success(spec: TaskSpec, world: World) -> bool:
    rope = world.bodies["rope"]
    end_gap = float(np.linalg.norm(rope.nodes[0] - rope.nodes[-1]))
    return bool(end_gap <= spec.success["end_distance"] and world.gripper.state == 0)


def _rope_script(spec: TaskSpec, world: World) -> list:
    c = spec.source_script
    rope = observe(world, "rope").nodes
    n = len(rope)
    end = rope[-1]
    grasp_h = c["grasp_height"]
    lateral = c["lateral_offset"]
    legs = [
        ([end[0], end[1], c["approach_height"]], 0, None),
        ([end[0], end[1], grasp_h], 0, None),
        ([end[0], end[1], grasp_h], 1, 1),  # close on the free end
    ]
    # drag the held end back along the chain toward node 0, offset to one
    # side; keeping the path on the rope body keeps it inside the region
    # where a fitted warp field is well determined
    for i in range(n - 3, 0, -c["node_stride"]):
        t = rope[min(i + 1, n - 1)] - rope[i - 1]
        t = t / max(float(np.linalg.norm(t)), 1e-9)
        normal = np.array([-t[1], t[0], 0.0])
        wp = rope[i] + lateral * normal
        legs.append(([wp[0], wp[1], grasp_h], 1, None))
    last = legs[-1][0]
    legs.append(([last[0], last[1], grasp_h], 0, 1))  # release
    legs.append(([last[0], last[1], c["retreat_height"]], 0, 3))
    return legs


# ---------------------------------------------------------------- towel_fold


def _towel_build(spec: TaskSpec, seed: int, canonical: bool) -> World:
    b, s = spec.builder, spec.sampler
    rng = np.random.default_rng(seed)
    rows, cols, spacing = b["rows"], b["cols"], b["spacing"]
    if canonical:
        off = np.zeros(2)
        theta = 0.0
        sigma = s["canonical_jitter_sigma"]
    else:
        off = rng.uniform(-s["offset_range"], s["offset_range"], 2)
        theta = math.radians(rng.uniform(-s["rot_max_deg"], s["rot_max_deg"]))
        sigma = s["jitter_sigma"]
    body = build_cloth(
        rows=rows,
        cols=cols,
        spacing=spacing,
        origin=b["origin"],
        node_mass=b.get("node_mass", 0.005),
        structural_stiffness=b.get("structural_stiffness", 0.9),
        shear_stiffness=b.get("shear_stiffness", 0.5),
    )
    center = body.nodes.mean(axis=0)
    nodes = (body.nodes - center) @ rot_z(theta).T + center
    nodes[:, :2] += off
    if sigma > 0.0:
        # nonzero jitter distorts the grid metric at first order; keep it well
        # under the solver's violation budget if enabled
        nodes[:, :2] += rng.normal(0.0, sigma, (len(nodes), 2))
    body.nodes[:] = nodes
    world = _make_world(spec, {"towel": body}, seed)
    settle(world, b.get("settle_steps", 150))
    world.step_count = 0
    return world


def _towel_grid(world: World):
    body = world.bodies["towel"]
    rows, cols = (int(v) for v in body.topology[5:-1].split(","))
    return body.nodes.reshape(rows, cols, 3), rows, cols


def _towel_success(spec: TaskSpec, world: World) -> bool:
    grid, rows, _ = _towel_grid(world)
    band = spec.success["band_rows"]
    dists = [
        np.linalg.norm(grid[r] - grid[rows - 1 - r], axis=1) for r in range(band)
    ]
    mean_gap = float(np.mean(dists))
    retracted = float(world.gripper.pose.position[2]) >= spec.success["retract_height"]
    return bool(mean_gap <= spec.success["mean_mirror_distance"] and retracted)


def _towel_script(spec: TaskSpec, world: World) -> list:
    c = spec.source_script
    grid, rows, cols = _towel_grid(world)
    far = 0.5 * (grid[rows - 1, cols // 2 - 1] + grid[rows - 1, cols // 2])
    near = 0.5 * (grid[0, cols // 2 - 1] + grid[0, cols // 2])
    grasp_h = c["grasp_height"]
    legs = [
        ([far[0], far[1], c["approach_height"]], 0, None),
        ([far[0], far[1], grasp_h], 0, None),
        ([far[0], far[1], grasp_h], 1, 1),  # close on the far edge band
    ]
    # carry the edge along a semicircular arc over the fold line onto the
    # near edge
    start = np.array([far[0], far[1], grasp_h])
    target = np.array([near[0], near[1], c["drop_height"]])
    chord = target[:2] - start[:2]
    n_arc = c["arc_waypoints"]
    apex = c["apex_height"]
    for k in range(1, n_arc + 1):
        t = k / n_arc
        xy = start[:2] + chord * t
        z = grasp_h + (target[2] - grasp_h) * t + apex * math.sin(math.pi * t)
        legs.append(([xy[0], xy[1], z], 1, None))
    legs.append(([target[0], target[1], c["drop_height"]], 0, 1))  # release
    legs.append(([target[0], target[1], c["retreat_height"]], 0, 3))
    return legs


# ---------------------------------------------------------------- cube_stack


def _cube_build(spec: TaskSpec, seed: int, canonical: bool) -> World:
    b, s = spec.builder, spec.sampler
    rng = np.random.default_rng(seed)
    he = b["half_extent"]
    (x0, x1), (y0, y1) = s["workspace"]
    if canonical:
        base_a = np.asarray(b["canonical_a"], dtype=float)
        base_b = np.asarray(b["canonical_b"], dtype=float)
        wiggle = s.get("canonical_wiggle", 0.01)
        pa = base_a + rng.uniform(-wiggle, wiggle, 2)
        pb = base_b + rng.uniform(-wiggle, wiggle, 2)
        rot_a = rot_b = np.eye(3)
    else:
        for _ in range(1000):
            pa = rng.uniform([x0, y0], [x1, y1])
            pb = rng.uniform([x0, y0], [x1, y1])
            if np.linalg.norm(pa - pb) >= s["min_separation"]:
                break
        else:
            raise RuntimeError("cube sampler failed to find a non-overlapping placement")
        rot_a = rot_z(math.radians(rng.uniform(-s["rot_max_deg"], s["rot_max_deg"])))
        rot_b = rot_z(math.radians(rng.uniform(-s["rot_max_deg"], s["rot_max_deg"])))
    cube_a = RigidCube(Pose(np.array([pa[0], pa[1], he]), rot_a), he)
    cube_b = RigidCube(Pose(np.array([pb[0], pb[1], he]), rot_b), he)
    world = _make_world(spec, {"cube_a": cube_a, "cube_b": cube_b}, seed)
    settle(world, b.get("settle_steps", 30))
    world.step_count = 0
    return world


def _cube_success(spec: TaskSpec, world: World) -> bool:
    a = world.bodies["cube_a"]
    b = world.bodies["cube_b"]
    horiz = float(np.linalg.norm(a.pose.position[:2] - b.pose.position[:2]))
    gap = float(
        (a.pose.position[2] - a.half_extent) - (b.pose.position[2] + b.half_extent)
    )
    return bool(
        horiz <= a.half_extent
        and abs(gap) <= spec.success["face_gap"]
        and world.gripper.state == 0
    )


def _cube_script(spec: TaskSpec, world: World) -> list:
    c = spec.source_script
    a = world.bodies["cube_a"]
    b = world.bodies["cube_b"]
    ta = a.pose.position + a.pose.rotation @ np.array([0.0, 0.0, a.half_extent])
    tb = b.pose.position + b.pose.rotation @ np.array([0.0, 0.0, b.half_extent])
    hover = c["hover_height"]
    grip_gap = c["grip_gap"]  # gripper point above the top face
    drop = c["drop_gap"]  # release height above the landing face
    grasp_z = ta[2] + grip_gap
    place_z = tb[2] + a.half_extent * 2 + grip_gap + drop
    legs = [
        ([ta[0], ta[1], ta[2] + hover], 0, None),
        ([ta[0], ta[1], grasp_z], 0, None),
        ([ta[0], ta[1], grasp_z], 1, 1),  # close
        ([ta[0], ta[1], ta[2] + hover], 1, None),
        ([tb[0], tb[1], tb[2] + hover + a.half_extent * 2], 1, None),
        ([tb[0], tb[1], place_z], 1, None),
        ([tb[0], tb[1], place_z], 0, 1),  # release
        ([tb[0], tb[1], c["retreat_height"]], 0, 3),
    ]
    return legs


# ---------------------------------------------------------------- registry

_FAMILIES = {
    "rope_u": _Family(_rope_build, _rope_success, _rope_script),
    "towel_fold": _Family(_towel_build, _towel_success, _towel_script),
    "cube_stack": _Family(_cube_build, _cube_success, _cube_script),
}

_BUILTINS = {
    "rope_u": TaskSpec(
        task_id="rope_u",
        family="rope_u",
        subtask_objects=("rope", "rope"),
        builder={
            "n_nodes": 20,
            "spacing": 0.02,
            "start": [0.0, 0.0, 0.0],
            "node_mass": 0.01,
            "stretch_stiffness": 0.9,
            "settle_steps": 200,
            "gripper_home": {"p": [0.19, -0.18, 0.2], "q": [1.0, 0.0, 0.0, 0.0]},
        },
        sampler={
            "bend_max_deg": 60.0,
            "wave_amp": 0.15,
            "canonical_wave_amp": 0.05,
        },
        success={"end_distance": 0.06},
        source_script={
            "approach_height": 0.08,
            "grasp_height": 0.01,
            "lateral_offset": 0.0,
            "node_stride": 2,
            "retreat_height": 0.2,
        },
    ),
    "towel_fold": TaskSpec(
        task_id="towel_fold",
        family="towel_fold",
        subtask_objects=("towel", "towel"),
        builder={
            "rows": 10,
            "cols": 10,
            "spacing": 0.02,
            "origin": [0.05, 0.05, 0.0],
            "node_mass": 0.005,
            "structural_stiffness": 0.9,
            "shear_stiffness": 0.5,
            "settle_steps": 150,
            "gripper_home": {"p": [0.14, -0.12, 0.2], "q": [1.0, 0.0, 0.0, 0.0]},
        },
        sampler={
            "offset_range": 0.03,
            "rot_max_deg": 15.0,
            "jitter_sigma": 0.0,
            "canonical_jitter_sigma": 0.0,
        },
        success={"band_rows": 2, "mean_mirror_distance": 0.03, "retract_height": 0.15},
        source_script={
            "approach_height": 0.08,
            "grasp_height": 0.008,
            "drop_height": 0.01,
            "apex_height": 0.07,
            "arc_waypoints": 14,
            "retreat_height": 0.22,
        },
    ),
    "cube_stack": TaskSpec(
        task_id="cube_stack",
        family="cube_stack",
        subtask_objects=("cube_a", "cube_b"),
        builder={
            "half_extent": 0.02,
            "canonical_a": [0.10, 0.06],
            "canonical_b": [0.22, 0.14],
            "settle_steps": 30,
            "gripper_home": {"p": [0.16, -0.12, 0.2], "q": [1.0, 0.0, 0.0, 0.0]},
        },
        sampler={
            "workspace": [[0.06, 0.30], [0.0, 0.24]],
            "min_separation": 0.09,
            "rot_max_deg": 10.0,
            "canonical_wiggle": 0.01,
        },
        success={"face_gap": 0.005},
        source_script={
            "hover_height": 0.08,
            "grip_gap": 0.008,
            "drop_gap": 0.004,
            "retreat_height": 0.2,
        },
    ),
}


def list_tasks() -> list[str]:
    return sorted(_BUILTINS)


def get_task(task_id: str) -> TaskSpec:
    if task_id not in _BUILTINS:
        raise KeyError(f"unknown task '{task_id}'; built-ins: {list_tasks()}")
    return _BUILTINS[task_id]


def load_task(path) -> TaskSpec:
    with open(path) as f:
        return TaskSpec.from_json(json.load(f))


# -------------------------------------------------------- success predicates


def rope_u_success(world: World) -> bool:
    return _rope_success(get_task("rope_u"), world)


def towel_fold_success(world: World) -> bool:
    return _towel_success(get_task("towel_fold"), world)


def cube_stack_success(world: World) -> bool:
    return _cube_success(get_task("cube_stack"), world)


# ------------------------------------------------------------ scripted demos


def _legs_to_actions(world: World, legs, step_m: float = 0.01) -> tuple[TimedAction, ...]:
    """Expand (position, gripper, n_steps) legs into per-step actions.

    Legs with n_steps=None are interpolated at <= step_m per step from the
    previous waypoint; rotations stay at the gripper's home orientation.
    """
    rot = world.gripper.pose.rotation
    prev = world.gripper.pose
    actions = []
    for pos, grip, n_steps in legs:
        target = Pose(np.asarray(pos, dtype=float), rot)
        if n_steps is None:
            dist = float(np.linalg.norm(target.position - prev.position))
            n_steps = max(1, math.ceil(dist / step_m))
        for p in interpolate_poses(prev, target, n_steps):
            actions.append(TimedAction(p, grip, len(actions)))
        prev = target
    return tuple(actions)


def scripted_source_demo(spec: TaskSpec, seed: int) -> SourceDemo:
    """Execute the task's waypoint script in a canonical world and record a
    demo: actions, per-subtask snapshots, and boundary annotations.  Raises
    ScriptFailed if the recorded demo does not pass the success predicate."""
    world = spec.build_world(seed, canonical=True)
    legs = spec.script_legs(world)
    actions = _legs_to_actions(world, legs, spec.source_script.get("step_m", 0.01))
    cuts = segment_boundaries([a.gripper for a in actions])
    if len(cuts) + 1 != len(spec.subtask_objects):
        raise ScriptFailed(
            f"script for '{spec.task_id}' segments into {len(cuts) + 1} subtasks, "
            f"expected {len(spec.subtask_objects)}"
        )
    starts = [0] + cuts
    snapshots = {}
    for t, action in enumerate(actions):
        if starts and t == starts[0]:
            k = len(snapshots)
            snapshots[k] = observe(world, spec.subtask_objects[k])
            starts.pop(0)
        step(world, action)
    settle(world, POST_SETTLE_STEPS)
    if not spec.success_fn(world):
        raise ScriptFailed(f"scripted demo for '{spec.task_id}' (seed {seed}) did not succeed")
    return SourceDemo(
        actions=actions,
        object_snapshots=snapshots,
        annotations=tuple(cuts),
        task_id=spec.task_id,
    )
