"""Source demonstration data model, file IO, and subtask segmentation.

A demo is an ordered action list plus per-subtask object snapshots taken at
segment starts.  Segmentation is either annotated (explicit boundary indices)
or heuristic: split at every gripper open<->closed transition, then merge any
segment shorter than MIN_SEGMENT_LEN into its successor (the trailing segment,
having none, merges into its predecessor).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    EmptySegment,
    InconsistentSubtaskCount,
    MissingAnnotations,
    MissingSnapshots,
    SchemaMismatch,
)
from .registration import DeformableConfig
from .warp import TimedAction, TrajectorySegment

SCHEMA = "softgen/v1"
MIN_SEGMENT_LEN = 5


@dataclass(frozen=True)
class SourceDemo:
    actions: tuple[TimedAction, ...]
    object_snapshots: dict[int, DeformableConfig]
    annotations: tuple[int, ...] | None
    task_id: str

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        if self.annotations is not None:
            ann = tuple(int(a) for a in self.annotations)
            if any(b <= a for a, b in zip((0,) + ann, ann)) or (
                ann and ann[-1] >= len(self.actions)
            ):
                raise EmptySegment(f"annotations {ann} must be strictly increasing in range")
            object.__setattr__(self, "annotations", ann)


@dataclass(frozen=True)
class SegmentLibrary:
    """Per-subtask lists of source segments, one entry per source demo."""

    segments: tuple[tuple[TrajectorySegment, ...], ...]
    subtask_object_ids: tuple[str, ...]
    task_id: str

    @property
    def num_subtasks(self) -> int:
        return len(self.segments)

    def candidates(self, subtask: int) -> tuple[TrajectorySegment, ...]:
        return self.segments[subtask]


def segment_boundaries(grippers, min_len: int = MIN_SEGMENT_LEN) -> list[int]:
    """Interior cut indices from gripper transitions, short segments merged."""
    n = len(grippers)
    cuts = [i for i in range(1, n) if grippers[i] != grippers[i - 1]]
    spans = list(zip([0] + cuts, cuts + [n]))
    i = 0
    while len(spans) > 1 and i < len(spans):
        a, b = spans[i]
        if b - a >= min_len:
            i += 1
            continue
        if i + 1 < len(spans):
            spans[i] = (a, spans[i + 1][1])
            del spans[i + 1]
        else:
            spans[i - 1] = (spans[i - 1][0], b)
            del spans[i]
            i -= 1
    return [a for a, _ in spans[1:]]


def segment_demo(demo: SourceDemo, mode: str = "heuristic") -> list[TrajectorySegment]:
    """Split a demo into object-centric subtask segments."""
    n = len(demo.actions)
    if mode == "annotated":
        if demo.annotations is None:
            raise MissingAnnotations("demo has no boundary annotations")
        cuts = list(demo.annotations)
    elif mode == "heuristic":
        cuts = segment_boundaries([a.gripper for a in demo.actions])
    else:
        raise ValueError(f"unknown segmentation mode: {mode}")

    starts = [0] + cuts
    ends = cuts + [n]
    segments = []
    for k, (a, b) in enumerate(zip(starts, ends)):
        if b <= a:
            raise EmptySegment(f"boundary {a} produces a zero-length segment")
        if k not in demo.object_snapshots:
            raise MissingSnapshots(f"demo lacks a snapshot for subtask {k}")
        segments.append(
            TrajectorySegment(demo.actions[a:b], k, demo.object_snapshots[k])
        )
    return segments


def build_library(demos: list[SourceDemo], mode: str = "heuristic") -> SegmentLibrary:
    """Group segments of several demos by subtask index."""
    if not demos:
        raise ValueError("need at least one source demo")
    task_id = demos[0].task_id
    per_demo = []
    for d in demos:
        if d.task_id != task_id:
            raise InconsistentSubtaskCount(f"task ids differ: {d.task_id} vs {task_id}")
        per_demo.append(segment_demo(d, mode))
    counts = {len(s) for s in per_demo}
    if len(counts) != 1:
        raise InconsistentSubtaskCount(f"demos segment into differing subtask counts: {counts}")
    m = counts.pop()
    object_ids = []
    for k in range(m):
        ids = {segs[k].start_config.object_id for segs in per_demo}
        if len(ids) != 1:
            raise InconsistentSubtaskCount(f"subtask {k} references multiple objects: {ids}")
        object_ids.append(ids.pop())
    return SegmentLibrary(
        segments=tuple(tuple(segs[k] for segs in per_demo) for k in range(m)),
        subtask_object_ids=tuple(object_ids),
        task_id=task_id,
    )


def write_demo(path, demo: SourceDemo) -> None:
    header = {
        "schema": SCHEMA,
        "kind": "demo",
        "task_id": demo.task_id,
        "annotations": None if demo.annotations is None else list(demo.annotations),
    }
    # snapshot values are bare node arrays; object ids ride alongside
    header["snapshots"] = {
        str(k): [[float(v) for v in row] for row in cfg.nodes]
        for k, cfg in sorted(demo.object_snapshots.items())
    }
    header["snapshot_objects"] = {
        str(k): cfg.object_id for k, cfg in sorted(demo.object_snapshots.items())
    }
    with open(path, "w") as f:
        f.write(json.dumps(header) + "\n")
        for a in demo.actions:
            f.write(json.dumps(a.to_json()) + "\n")


def read_demo(path) -> SourceDemo:
    path = Path(path)
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines:
        raise SchemaMismatch(f"{path}: empty demo file")
    header = json.loads(lines[0])
    if header.get("schema") != SCHEMA or header.get("kind") != "demo":
        raise SchemaMismatch(f"{path}: not a {SCHEMA} demo file")
    actions = tuple(TimedAction.from_json(json.loads(ln)) for ln in lines[1:])
    objects = header.get("snapshot_objects", {})
    snapshots = {
        int(k): DeformableConfig(np.asarray(nodes, dtype=float), objects.get(k, ""))
        for k, nodes in header.get("snapshots", {}).items()
    }
    ann = header.get("annotations")
    return SourceDemo(
        actions=actions,
        object_snapshots=snapshots,
        annotations=None if ann is None else tuple(ann),
        task_id=header.get("task_id", ""),
    )


def read_demos(paths) -> list[SourceDemo]:
    return [read_demo(p) for p in paths]
