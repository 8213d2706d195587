"""Desk-scale deformable world: PBD soft bodies, a rigid cube, and a
pose-commanded kinematic gripper with proximity attachment.

Grasping is abstracted as attachment: on the open->closed transition the
gripper rigidly pins up to `max_grab` nearby soft nodes (and any rigid cube
whose surface is in reach) to its own frame; closed->open releases them.
Everything is deterministic: stepping uses no RNG, and body iteration order
is the insertion order of the bodies dict.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ..errors import NumericalBlowup, UnknownObject
from ..geometry import Pose, compose, inverse
from ..registration import DeformableConfig
from ..warp import TimedAction
from .backend import BACKEND, max_violation_ratio, pbd_substep

__all__ = [
    "BACKEND",
    "DistanceConstraint",
    "SoftBody",
    "RigidCube",
    "Attachment",
    "Gripper",
    "World",
    "build_rope",
    "build_cloth",
    "step",
    "observe",
    "reset",
    "settle",
    "world_to_json",
    "world_from_json",
]

COORD_LIMIT = 100.0


@dataclass
class DistanceConstraint:
    i: int
    j: int
    rest_length: float
    stiffness: float
    one_sided: bool = False  # tether: resists overstretch only

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("constraint endpoints must differ")
        if self.rest_length <= 0.0:
            raise ValueError("rest length must be positive")
        if not 0.0 < self.stiffness <= 1.0:
            raise ValueError("stiffness must be in (0, 1]")


class SoftBody:
    """Node cloud + distance constraints solved by the PBD kernel."""

    def __init__(self, nodes, masses, constraints, pinned=(), topology=""):
        self.nodes = np.ascontiguousarray(nodes, dtype=float).reshape(-1, 3)
        n = len(self.nodes)
        self.velocities = np.zeros((n, 3))
        self.masses = np.ascontiguousarray(masses, dtype=float).reshape(n)
        if np.any(self.masses <= 0.0):
            raise ValueError("masses must be positive")
        self.constraints = list(constraints)
        self.pinned = frozenset(int(i) for i in pinned)
        if self.pinned and max(self.pinned) >= n:
            raise ValueError("pinned index out of range")
        self.topology = topology
        self.pin_positions = self.nodes[sorted(self.pinned)].copy()

        self._ci = np.ascontiguousarray([c.i for c in self.constraints], dtype=np.int32)
        self._cj = np.ascontiguousarray([c.j for c in self.constraints], dtype=np.int32)
        self._rest = np.ascontiguousarray([c.rest_length for c in self.constraints], dtype=float)
        self._stiff = np.ascontiguousarray([c.stiffness for c in self.constraints], dtype=float)
        self._one_sided = np.ascontiguousarray(
            [1 if c.one_sided else 0 for c in self.constraints], dtype=np.uint8
        )
        self._base_inv_mass = 1.0 / self.masses
        self._base_inv_mass[sorted(self.pinned)] = 0.0

    def __len__(self) -> int:
        return len(self.nodes)

    def max_violation_ratio(self) -> float:
        if not self.constraints:
            return 0.0
        return float(
            max_violation_ratio(self.nodes, self._ci, self._cj, self._rest, self._one_sided)
        )

    def kinetic_energy(self) -> float:
        return float(0.5 * (self.masses @ np.einsum("ij,ij->i", self.velocities, self.velocities)))


@dataclass
class RigidCube:
    pose: Pose
    half_extent: float
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def corners(self) -> np.ndarray:
        """8 corners, fixed (-,-,-) .. (+,+,+) sign order, row-major."""
        he = self.half_extent
        signs = np.array(
            [[sx, sy, sz] for sx in (-1.0, 1.0) for sy in (-1.0, 1.0) for sz in (-1.0, 1.0)]
        )
        return signs * he @ self.pose.rotation.T + self.pose.position

    def surface_distance(self, point: np.ndarray) -> float:
        local = self.pose.rotation.T @ (np.asarray(point, dtype=float) - self.pose.position)
        q = np.abs(local) - self.half_extent
        outside = np.linalg.norm(np.maximum(q, 0.0))
        inside = min(float(q.max()), 0.0)
        return float(outside + inside)


@dataclass
class Attachment:
    body_id: str
    node: int | None = None  # None -> rigid body attachment
    offset: np.ndarray | None = None  # gripper-frame offset of the node
    rel_pose: Pose | None = None  # gripper->body pose for rigid bodies


@dataclass
class Gripper:
    pose: Pose
    state: int = 0
    attached: list[Attachment] = field(default_factory=list)
    attach_radius: float = 0.015
    max_grab: int = 3


Body = Union[SoftBody, RigidCube]


@dataclass
class World:
    bodies: dict[str, Body]
    gripper: Gripper
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    dt: float = 0.01
    solver_iters: int = 10
    damping: float = 0.02
    friction_mu: float = 0.8
    rng_seed: int = 0
    step_count: int = 0

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float).reshape(3)
        if not 0.0 < self.dt <= 0.05:
            raise ValueError(f"dt must be in (0, 0.05], got {self.dt}")

    def clone(self) -> "World":
        import copy

        return copy.deepcopy(self)


def build_rope(
    n_nodes: int = 20,
    spacing: float = 0.02,
    start=(0.0, 0.0, 0.0),
    direction=(1.0, 0.0, 0.0),
    node_mass: float = 0.01,
    stretch_stiffness: float = 0.9,
    pinned=(),
    pin_tethers: bool = True,
) -> SoftBody:
    """Chain of stretch constraints between neighbors.

    Pinned chains also get one-sided tether constraints to the pin (rest
    length = path distance), which keeps hanging ropes taut at the small
    iteration counts the solver runs.
    """
    d = np.asarray(direction, dtype=float)
    d /= np.linalg.norm(d)
    nodes = np.asarray(start, dtype=float) + np.outer(np.arange(n_nodes) * spacing, d)
    constraints = [
        DistanceConstraint(i, i + 1, spacing, stretch_stiffness) for i in range(n_nodes - 1)
    ]
    if pin_tethers:
        for p in sorted(set(int(i) for i in pinned)):
            for j in range(n_nodes):
                dist = abs(j - p)
                if dist >= 2:
                    constraints.append(
                        DistanceConstraint(p, j, dist * spacing, 1.0, one_sided=True)
                    )
    return SoftBody(
        nodes,
        np.full(n_nodes, node_mass),
        constraints,
        pinned=pinned,
        topology=f"chain({n_nodes})",
    )


def build_cloth(
    rows: int = 10,
    cols: int = 10,
    spacing: float = 0.02,
    origin=(0.0, 0.0, 0.0),
    node_mass: float = 0.01,
    structural_stiffness: float = 0.9,
    shear_stiffness: float = 0.5,
    pinned=(),
) -> SoftBody:
    """Grid cloth with structural + shear constraints, row-major node order."""
    org = np.asarray(origin, dtype=float)
    nodes = np.array(
        [org + np.array([c * spacing, r * spacing, 0.0]) for r in range(rows) for c in range(cols)]
    )
    idx = lambda r, c: r * cols + c
    constraints = []
    diag = spacing * np.sqrt(2.0)
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                constraints.append(
                    DistanceConstraint(idx(r, c), idx(r, c + 1), spacing, structural_stiffness)
                )
            if r + 1 < rows:
                constraints.append(
                    DistanceConstraint(idx(r, c), idx(r + 1, c), spacing, structural_stiffness)
                )
            if r + 1 < rows and c + 1 < cols:
                constraints.append(
                    DistanceConstraint(idx(r, c), idx(r + 1, c + 1), diag, shear_stiffness)
                )
                constraints.append(
                    DistanceConstraint(idx(r + 1, c), idx(r, c + 1), diag, shear_stiffness)
                )
    return SoftBody(
        nodes,
        np.full(rows * cols, node_mass),
        constraints,
        pinned=pinned,
        topology=f"grid({rows},{cols})",
    )


def _attach(world: World) -> None:
    g = world.gripper
    gpos = g.pose.position
    candidates = []
    for body_id in world.bodies:
        body = world.bodies[body_id]
        if isinstance(body, SoftBody):
            dist = np.linalg.norm(body.nodes - gpos, axis=1)
            for i in np.flatnonzero(dist <= g.attach_radius):
                candidates.append((float(dist[i]), body_id, int(i)))
    candidates.sort()
    rt = g.pose.rotation.T
    for dist, body_id, node in candidates[: g.max_grab]:
        offset = rt @ (world.bodies[body_id].nodes[node] - gpos)
        g.attached.append(Attachment(body_id, node=node, offset=offset))
    for body_id in world.bodies:
        body = world.bodies[body_id]
        if isinstance(body, RigidCube) and body.surface_distance(gpos) <= g.attach_radius:
            g.attached.append(
                Attachment(body_id, rel_pose=compose(inverse(g.pose), body.pose))
            )


def _step_soft(world: World, body_id: str, body: SoftBody) -> None:
    g = world.gripper
    fixed_idx = []
    fixed_pos = []
    for k, i in enumerate(sorted(body.pinned)):
        fixed_idx.append(i)
        fixed_pos.append(body.pin_positions[k])
    for att in g.attached:
        if att.body_id == body_id and att.node is not None:
            fixed_idx.append(att.node)
            fixed_pos.append(g.pose.rotation @ att.offset + g.pose.position)
    inv_mass = body._base_inv_mass.copy()
    if fixed_idx:
        inv_mass[fixed_idx] = 0.0
    idx = np.ascontiguousarray(fixed_idx, dtype=np.int32)
    pos = (
        np.ascontiguousarray(fixed_pos, dtype=float).reshape(-1, 3)
        if fixed_idx
        else np.zeros((0, 3))
    )
    status = pbd_substep(
        body.nodes,
        body.velocities,
        inv_mass,
        body._ci,
        body._cj,
        body._rest,
        body._stiff,
        body._one_sided,
        idx,
        pos,
        world.gravity[0],
        world.gravity[1],
        world.gravity[2],
        world.dt,
        world.solver_iters,
        world.damping,
        world.friction_mu,
    )
    if status != 0:
        raise NumericalBlowup(f"soft body '{body_id}' left the sane range at step {world.step_count}")


def _support_height(world: World, body_id: str, cube: RigidCube) -> float:
    support = cube.half_extent  # ground plane
    cx, cy, cz = cube.pose.position
    for other_id, other in world.bodies.items():
        if other_id == body_id or not isinstance(other, RigidCube):
            continue
        if other.pose.position[2] > cz:
            continue
        reach = cube.half_extent + other.half_extent
        if (
            abs(cx - other.pose.position[0]) < reach
            and abs(cy - other.pose.position[1]) < reach
        ):
            support = max(support, other.pose.position[2] + other.half_extent + cube.half_extent)
    return support


def _step_cube(world: World, body_id: str, cube: RigidCube) -> None:
    g = world.gripper
    held = None
    for att in g.attached:
        if att.body_id == body_id and att.rel_pose is not None:
            held = att
            break
    if held is not None:
        cube.pose = compose(g.pose, held.rel_pose)
        cube.velocity = np.zeros(3)
        cube.angular_velocity = np.zeros(3)
    else:
        cube.velocity = cube.velocity + world.gravity * world.dt
        pos = cube.pose.position + cube.velocity * world.dt
        cube.pose = Pose(pos, cube.pose.rotation)
        support = _support_height(world, body_id, cube)
        if cube.pose.position[2] < support:
            pos = cube.pose.position.copy()
            pos[2] = support
            cube.pose = Pose(pos, cube.pose.rotation)
            cube.velocity = np.zeros(3)
    p = cube.pose.position
    if not np.all(np.isfinite(p)) or np.any(np.abs(p) > COORD_LIMIT):
        raise NumericalBlowup(f"cube '{body_id}' left the sane range at step {world.step_count}")


def step(world: World, action: TimedAction) -> World:
    """Advance one control step: kinematic gripper update, attachment
    transitions, then one PBD substep per body.  Mutates and returns world."""
    g = world.gripper
    prev = g.state
    g.pose = Pose(action.pose.position.copy(), action.pose.rotation.copy())
    g.state = action.gripper
    if prev == 0 and g.state == 1:
        _attach(world)
    elif prev == 1 and g.state == 0:
        g.attached = []

    for body_id, body in world.bodies.items():
        if isinstance(body, SoftBody):
            _step_soft(world, body_id, body)
        else:
            _step_cube(world, body_id, body)
    world.step_count += 1
    return world


def settle(world: World, n_steps: int) -> World:
    """Step with the current gripper pose and state held constant."""
    for _ in range(n_steps):
        step(world, TimedAction(world.gripper.pose, world.gripper.state, world.step_count))
    return world


def observe(world: World, object_id: str) -> DeformableConfig:
    """Node positions of a soft body, or the 8 corners of a rigid cube."""
    if object_id not in world.bodies:
        raise UnknownObject(f"no object '{object_id}' in world")
    body = world.bodies[object_id]
    if isinstance(body, SoftBody):
        return DeformableConfig(body.nodes.copy(), object_id)
    return DeformableConfig(body.corners(), object_id)


def reset(spec, seed: int):
    """Deterministically build a world from a task's initial-state sampler."""
    return spec.build_world(seed)


def _soft_to_json(body: SoftBody) -> dict:
    return {
        "kind": "soft",
        "topology": body.topology,
        "nodes": body.nodes.tolist(),
        "velocities": body.velocities.tolist(),
        "masses": body.masses.tolist(),
        "pinned": sorted(body.pinned),
        "constraints": [
            [c.i, c.j, c.rest_length, c.stiffness, int(c.one_sided)] for c in body.constraints
        ],
    }


def world_to_json(world: World) -> dict:
    bodies = {}
    for body_id, body in world.bodies.items():
        if isinstance(body, SoftBody):
            bodies[body_id] = _soft_to_json(body)
        else:
            bodies[body_id] = {
                "kind": "cube",
                "pose": body.pose.to_json(),
                "half_extent": body.half_extent,
                "velocity": body.velocity.tolist(),
                "angular_velocity": body.angular_velocity.tolist(),
            }
    g = world.gripper
    return {
        "v": 1,
        "bodies": bodies,
        "gripper": {
            "pose": g.pose.to_json(),
            "state": g.state,
            "attach_radius": g.attach_radius,
            "max_grab": g.max_grab,
            "attached": [
                {
                    "body_id": a.body_id,
                    "node": a.node,
                    "offset": None if a.offset is None else a.offset.tolist(),
                    "rel_pose": None if a.rel_pose is None else a.rel_pose.to_json(),
                }
                for a in g.attached
            ],
        },
        "gravity": world.gravity.tolist(),
        "dt": world.dt,
        "solver_iters": world.solver_iters,
        "damping": world.damping,
        "friction_mu": world.friction_mu,
        "rng_seed": world.rng_seed,
        "step_count": world.step_count,
    }


def world_from_json(obj: dict) -> World:
    if obj.get("v") != 1:
        raise ValueError(f"unsupported world snapshot version: {obj.get('v')}")
    bodies: dict[str, Body] = {}
    for body_id, b in obj["bodies"].items():
        if b["kind"] == "soft":
            body = SoftBody(
                np.asarray(b["nodes"], dtype=float),
                np.asarray(b["masses"], dtype=float),
                [
                    DistanceConstraint(int(i), int(j), float(r), float(s), bool(o))
                    for i, j, r, s, o in b["constraints"]
                ],
                pinned=b["pinned"],
                topology=b["topology"],
            )
            body.velocities = np.asarray(b["velocities"], dtype=float).reshape(-1, 3)
            bodies[body_id] = body
        else:
            bodies[body_id] = RigidCube(
                Pose.from_json(b["pose"]),
                float(b["half_extent"]),
                np.asarray(b["velocity"], dtype=float),
                np.asarray(b["angular_velocity"], dtype=float),
            )
    gj = obj["gripper"]
    gripper = Gripper(
        Pose.from_json(gj["pose"]),
        state=int(gj["state"]),
        attach_radius=float(gj["attach_radius"]),
        max_grab=int(gj["max_grab"]),
        attached=[
            Attachment(
                a["body_id"],
                node=a["node"],
                offset=None if a["offset"] is None else np.asarray(a["offset"], dtype=float),
                rel_pose=None if a["rel_pose"] is None else Pose.from_json(a["rel_pose"]),
            )
            for a in gj["attached"]
        ],
    )
    return World(
        bodies=bodies,
        gripper=gripper,
        gravity=np.asarray(obj["gravity"], dtype=float),
        dt=float(obj["dt"]),
        solver_iters=int(obj["solver_iters"]),
        damping=float(obj["damping"]),
        friction_mu=float(obj["friction_mu"]),
        rng_seed=int(obj["rng_seed"]),
        step_count=int(obj["step_count"]),
    )
