"""The generation loop: sample a start state, then per subtask observe the
object, select the lowest-cost source segment, adapt it (warp field or
constant rigid transform), bridge from the current pose, and execute.  Trials
that pass the task's success predicate are kept.

Determinism contract: a trial depends only on (config, trial_index) through a
fixed avalanche hash, so datasets are byte-identical across runs and across
worker counts.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .demos import SCHEMA, SegmentLibrary
from .errors import NumericalBlowup, SchemaMismatch, SoftGenError
from .geometry import Pose
from .registration import (
    DEFAULT_LAMBDA,
    DeformableConfig,
    RegistrationResult,
    fit_tps,
    rigid_register,
)
from .simulator import settle, step, observe
from .tasks import POST_SETTLE_STEPS, TaskSpec, get_task
from .warp import BridgePolicy, TimedAction, TrajectorySegment, bridge, rigid_transform_segment, warp_segment

_MASK64 = (1 << 64) - 1


def mix_seed(base_seed: int, trial_index: int) -> int:
    """splitmix64-style avalanche of (base_seed, trial_index)."""
    z = (base_seed + (trial_index + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class GenerationConfig:
    task_id: str
    method: str = "warp"  # "warp" | "rigid"
    num_trials: int = 1
    base_seed: int = 0
    lam: float = DEFAULT_LAMBDA
    bridge: BridgePolicy = field(default_factory=BridgePolicy)
    keep_failures: bool = False
    canonical: bool = False  # pin trial start states to the canonical sampler
    settle_steps: int = POST_SETTLE_STEPS
    workers: int = 1
    n_source_demos: int = 1

    def __post_init__(self):
        if self.method not in ("warp", "rigid"):
            raise ValueError(f"method must be 'warp' or 'rigid', got {self.method!r}")
        if self.num_trials < 1:
            raise ValueError("num_trials must be >= 1")

    def to_json(self) -> dict:
        return {
            "task_id": self.task_id,
            "method": self.method,
            "num_trials": self.num_trials,
            "base_seed": self.base_seed,
            "lambda": self.lam,
            "bridge": {
                "step_m": self.bridge.step_m,
                "min_steps": self.bridge.min_steps,
                "max_steps": self.bridge.max_steps,
            },
            "keep_failures": self.keep_failures,
            "canonical": self.canonical,
            "settle_steps": self.settle_steps,
            "n_source_demos": self.n_source_demos,
        }

    @staticmethod
    def from_json(obj: dict) -> "GenerationConfig":
        br = obj.get("bridge", {})
        return GenerationConfig(
            task_id=obj["task_id"],
            method=obj.get("method", "warp"),
            num_trials=int(obj.get("num_trials", 1)),
            base_seed=int(obj.get("base_seed", 0)),
            lam=float(obj.get("lambda", DEFAULT_LAMBDA)),
            bridge=BridgePolicy(
                step_m=float(br.get("step_m", 0.01)),
                min_steps=int(br.get("min_steps", 5)),
                max_steps=int(br.get("max_steps", 100)),
            ),
            keep_failures=bool(obj.get("keep_failures", False)),
            canonical=bool(obj.get("canonical", False)),
            settle_steps=int(obj.get("settle_steps", POST_SETTLE_STEPS)),
            n_source_demos=int(obj.get("n_source_demos", 1)),
        )


@dataclass(frozen=True)
class SegmentProvenance:
    subtask_index: int
    source_demo_index: int
    registration_cost: float
    observed_nodes: np.ndarray  # config selection ran against, for re-checking

    def to_json(self) -> dict:
        return {
            "subtask_index": self.subtask_index,
            "source_demo_index": self.source_demo_index,
            "registration_cost": self.registration_cost,
            "observed_nodes": [[float(v) for v in row] for row in self.observed_nodes],
        }


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    trial_seed: int
    success: bool
    actions: tuple[TimedAction, ...]
    provenance: tuple[SegmentProvenance, ...]
    initial_snapshot: dict[str, np.ndarray]
    failure_reason: str | None = None

    def to_json(self) -> dict:
        return {
            "kind": "trial",
            "trial_index": self.trial_index,
            "trial_seed": self.trial_seed,
            "success": bool(self.success),
            "failure_reason": self.failure_reason,
            "actions": [a.to_json() for a in self.actions],
            "provenance": [p.to_json() for p in self.provenance],
            "initial_snapshot": {
                k: [[float(v) for v in row] for row in nodes]
                for k, nodes in sorted(self.initial_snapshot.items())
            },
        }

    @staticmethod
    def from_json(obj: dict) -> "TrialRecord":
        try:
            if obj.get("kind") != "trial":
                raise KeyError("kind")
            return TrialRecord(
                trial_index=int(obj["trial_index"]),
                trial_seed=int(obj["trial_seed"]),
                success=bool(obj["success"]),
                failure_reason=obj.get("failure_reason"),
                actions=tuple(TimedAction.from_json(a) for a in obj["actions"]),
                provenance=tuple(
                    SegmentProvenance(
                        int(p["subtask_index"]),
                        int(p["source_demo_index"]),
                        float(p["registration_cost"]),
                        np.asarray(p["observed_nodes"], dtype=float),
                    )
                    for p in obj["provenance"]
                ),
                initial_snapshot={
                    k: np.asarray(v, dtype=float) for k, v in obj["initial_snapshot"].items()
                },
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaMismatch(f"malformed trial record: {e}") from e


@dataclass(frozen=True)
class Selection:
    segment: TrajectorySegment
    transform: RegistrationResult | Pose
    cost: float
    source_index: int


def select_source_segment(
    lib: SegmentLibrary,
    subtask: int,
    current: DeformableConfig,
    method: str = "warp",
    lam: float = DEFAULT_LAMBDA,
) -> Selection:
    """Argmin-cost candidate; ties break toward the lowest source index."""
    best = None
    last_error = None
    for i, seg in enumerate(lib.candidates(subtask)):
        try:
            if method == "warp":
                res = fit_tps(seg.start_config, current, lam)
                cost = res.cost
                transform = res
            else:
                transform, cost = rigid_register(seg.start_config, current)
        except SoftGenError as e:
            last_error = e
            continue
        if best is None or cost < best.cost:
            best = Selection(seg, transform, cost, i)
    if best is None:
        raise SoftGenError(f"all candidates failed for subtask {subtask}: {last_error}")
    return best


def generate_trial(cfg: GenerationConfig, lib: SegmentLibrary, trial_index: int) -> TrialRecord:
    """Run one trial end to end; never raises (failures are recorded)."""
    spec = get_task(cfg.task_id)
    seed = cfg.base_seed if cfg.canonical else mix_seed(cfg.base_seed, trial_index)
    world = spec.build_world(seed, canonical=cfg.canonical)
    initial = {
        oid: observe(world, oid).nodes for oid in sorted(set(lib.subtask_object_ids))
    }
    executed: list[TimedAction] = []
    provenance: list[SegmentProvenance] = []
    failure = None
    for s in range(lib.num_subtasks):
        current = observe(world, lib.subtask_object_ids[s])
        try:
            sel = select_source_segment(lib, s, current, cfg.method, cfg.lam)
        except SoftGenError as e:
            failure = f"registration failed: {e}"
            break
        provenance.append(
            SegmentProvenance(s, sel.source_index, sel.cost, current.nodes)
        )
        if cfg.method == "warp":
            adapted = warp_segment(sel.transform.field, sel.segment, current)
        else:
            adapted = rigid_transform_segment(sel.transform, sel.segment, current)
        n_interp = cfg.bridge.n_steps(world.gripper.pose, adapted.actions[0].pose)
        full = bridge(world.gripper.pose, adapted, n_interp)
        try:
            for a in full.actions:
                step(world, a)
                executed.append(a)
        except NumericalBlowup as e:
            failure = f"simulation blowup: {e}"
            break
    if failure is None:
        try:
            settle(world, cfg.settle_steps)
        except NumericalBlowup as e:
            failure = f"simulation blowup: {e}"
    success = failure is None and spec.success_fn(world)
    actions = tuple(replace(a, t=i) for i, a in enumerate(executed))
    return TrialRecord(
        trial_index=trial_index,
        trial_seed=seed,
        success=success,
        actions=actions,
        provenance=tuple(provenance),
        initial_snapshot=initial,
        failure_reason=failure,
    )


def _trial_worker(args) -> TrialRecord:
    cfg, lib, k = args
    return generate_trial(cfg, lib, k)


def generate_trials(cfg: GenerationConfig, lib: SegmentLibrary) -> list[TrialRecord]:
    """All trial records in index order, optionally on a worker pool."""
    indices = range(cfg.num_trials)
    if cfg.workers <= 1:
        return [generate_trial(cfg, lib, k) for k in indices]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        records = list(pool.map(_trial_worker, [(cfg, lib, k) for k in indices]))
    return sorted(records, key=lambda r: r.trial_index)


def generate_dataset(cfg: GenerationConfig, lib: SegmentLibrary, out_path) -> dict:
    """Run the trials and write kept records as JSON Lines.

    The file carries the effective config in its header and an
    attempts/successes summary trailer; the same config always produces the
    same bytes, regardless of worker count.
    """
    records = generate_trials(cfg, lib)
    successes = sum(1 for r in records if r.success)
    kept = [r for r in records if r.success or cfg.keep_failures]
    header = {"schema": SCHEMA, "kind": "dataset", "config": cfg.to_json()}
    summary = {
        "kind": "summary",
        "attempts": cfg.num_trials,
        "successes": successes,
        "success_rate": successes / cfg.num_trials,
    }
    try:
        with open(out_path, "w") as f:
            f.write(json.dumps(header) + "\n")
            for r in kept:
                f.write(json.dumps(r.to_json()) + "\n")
            f.write(json.dumps(summary) + "\n")
    except OSError as e:
        raise SoftGenError(f"cannot write dataset: {e}") from e
    return {
        "attempts": cfg.num_trials,
        "successes": successes,
        "success_rate": successes / cfg.num_trials,
        "path": str(out_path),
    }


def read_dataset(path) -> tuple[GenerationConfig, list[TrialRecord], dict | None]:
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines:
        return None, [], None
    header = json.loads(lines[0])
    if header.get("schema") != SCHEMA or header.get("kind") != "dataset":
        raise SchemaMismatch(f"{path}: not a {SCHEMA} dataset")
    cfg = GenerationConfig.from_json(header["config"])
    records = []
    summary = None
    for ln in lines[1:]:
        obj = json.loads(ln)
        if obj.get("kind") == "summary":
            summary = obj
        else:
            records.append(TrialRecord.from_json(obj))
    return cfg, records, summary


def replay_trial(
    record: TrialRecord,
    spec: TaskSpec,
    canonical: bool = False,
    settle_steps: int = POST_SETTLE_STEPS,
) -> bool:
    """Re-execute a record in a fresh world; True iff the success flag matches."""
    if not isinstance(record, TrialRecord):
        raise SchemaMismatch("replay needs a TrialRecord")
    world = spec.build_world(record.trial_seed, canonical=canonical)
    ok = True
    try:
        for a in record.actions:
            step(world, a)
        settle(world, settle_steps)
    except NumericalBlowup:
        ok = False
    success = ok and spec.success_fn(world)
    return success == record.success
