"""Command-line surface: generate, replay, register, warp-dump, stats.

Exit codes: 0 success, 2 bad arguments, 3 I/O failure, 4 schema mismatch.
SOFTGEN_SEED overrides --seed when set.  All files are JSON / JSON Lines
stamped with {"schema": "softgen/v1"}.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .demos import SCHEMA, build_library, read_demos, write_demo
from .errors import SchemaMismatch, SoftGenError
from .pipeline import GenerationConfig, generate_dataset, read_dataset, replay_trial
from .registration import (
    DEFAULT_LAMBDA,
    DeformableConfig,
    RpmParams,
    fit_tps,
    fit_tps_rpm,
)
from .tasks import get_task, list_tasks, scripted_source_demo
from .warp import BridgePolicy, warp_segment


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


def _pick(flag, cfg_file: dict, key: str, default):
    """Config precedence: flags > config file > built-in default."""
    if flag is not None:
        return flag
    if key in cfg_file:
        return cfg_file[key]
    return default


def _parse_seed(raw) -> tuple[int, bool]:
    raw = os.environ.get("SOFTGEN_SEED", raw)
    if raw is None:
        return 0, False
    if str(raw) == "canonical":
        return 0, True
    return int(raw), False


def _read_config_json(path) -> DeformableConfig:
    with open(path) as f:
        obj = json.load(f)
    if obj.get("schema") != SCHEMA:
        raise SchemaMismatch(f"{path}: not a {SCHEMA} config file")
    return DeformableConfig.from_json(obj)


def _probe_grid(field, src: DeformableConfig, per_axis: int = 5):
    lo = src.nodes.min(axis=0)
    hi = src.nodes.max(axis=0)
    axes = [np.linspace(lo[d], hi[d], per_axis) for d in range(3)]
    pts = np.array([[x, y, z] for x in axes[0] for y in axes[1] for z in axes[2]])
    return pts, field(pts)


def cmd_generate(args) -> int:
    cfg_file = _load_config_file(args.config)
    seed, canonical = _parse_seed(_pick(args.seed, cfg_file, "seed", None))
    n_demos = int(_pick(args.num_demos, cfg_file, "n_source_demos", 1))
    cfg = GenerationConfig(
        task_id=_pick(args.task, cfg_file, "task_id", None),
        method=_pick(args.method, cfg_file, "method", "warp"),
        num_trials=int(_pick(args.num, cfg_file, "num_trials", 1)),
        base_seed=seed,
        lam=float(_pick(args.lam, cfg_file, "lambda", DEFAULT_LAMBDA)),
        bridge=BridgePolicy(),
        keep_failures=bool(_pick(args.keep_failures or None, cfg_file, "keep_failures", False)),
        canonical=canonical,
        workers=int(_pick(args.workers, cfg_file, "workers", 1)),
        n_source_demos=n_demos,
    )
    if cfg.task_id is None:
        print("generate: --task is required", file=sys.stderr)
        return 2
    spec = get_task(cfg.task_id)
    if args.scripted:
        demos = [scripted_source_demo(spec, cfg.base_seed + i) for i in range(n_demos)]
        if args.save_demos:
            os.makedirs(args.save_demos, exist_ok=True)
            for i, d in enumerate(demos):
                write_demo(os.path.join(args.save_demos, f"{cfg.task_id}_demo{i}.jsonl"), d)
    elif args.demos:
        demos = read_demos(args.demos)
    else:
        print("generate: need --scripted or --demos", file=sys.stderr)
        return 2
    lib = build_library(demos)
    t0 = time.perf_counter()
    summary = generate_dataset(cfg, lib, args.out)
    summary["wall_time_s"] = round(time.perf_counter() - t0, 3)
    print(json.dumps(summary))
    return 0


def cmd_replay(args) -> int:
    cfg, records, _ = read_dataset(args.data)
    if cfg is None:
        print("0/0 consistent")
        return 0
    spec = get_task(cfg.task_id)
    bad = []
    for r in records:
        if not replay_trial(r, spec, canonical=cfg.canonical, settle_steps=cfg.settle_steps):
            bad.append(r.trial_index)
    print(f"{len(records) - len(bad)}/{len(records)} consistent")
    if bad:
        print(f"inconsistent trial indices: {bad}", file=sys.stderr)
        return 1
    return 0


def cmd_register(args) -> int:
    src = _read_config_json(args.src)
    tgt = _read_config_json(args.tgt)
    if args.method == "rpm":
        result = fit_tps_rpm(src, tgt, RpmParams())
    else:
        result = fit_tps(src, tgt, args.lam)
    pts, warped = _probe_grid(result.field, src)
    out = {
        "schema": SCHEMA,
        "kind": "registration",
        "method": args.method,
        "cost": result.cost,
        "residual": result.residual,
        "bending_energy": result.bending_energy,
        "lambda": result.lam,
        "degenerate": result.degenerate,
        "probe_grid": pts.tolist(),
        "probe_warped": warped.tolist(),
    }
    text = json.dumps(out)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_warp_dump(args) -> int:
    src = _read_config_json(args.src)
    tgt = _read_config_json(args.tgt)
    result = fit_tps(src, tgt, args.lam)
    pts, warped = _probe_grid(result.field, src)
    out = {
        "schema": SCHEMA,
        "kind": "warp-dump",
        "cost": result.cost,
        "probe_grid": pts.tolist(),
        "probe_warped": warped.tolist(),
    }
    if args.demo is not None:
        demos = read_demos([args.demo])
        lib = build_library(demos)
        seg = lib.candidates(args.subtask)[0]
        adapted = warp_segment(result.field, seg, tgt)
        out["source_poses"] = [a.to_json() for a in seg.actions]
        out["warped_poses"] = [a.to_json() for a in adapted.actions]
    text = json.dumps(out)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    else:
        print(text)
    return 0


def _histogram(values, bins: int = 10) -> list[str]:
    if not values:
        return []
    lo, hi = min(values), max(values)
    width = (hi - lo) / bins if hi > lo else 1.0
    counts = [0] * bins
    for v in values:
        counts[min(int((v - lo) / width), bins - 1)] += 1
    peak = max(counts)
    lines = []
    for k, c in enumerate(counts):
        bar = "#" * (0 if peak == 0 else round(40 * c / peak))
        lines.append(f"  [{lo + k * width:.3e}, {lo + (k + 1) * width:.3e}) {c:4d} {bar}")
    return lines


def cmd_stats(args) -> int:
    cfg, records, summary = read_dataset(args.data)
    if cfg is None:
        print(json.dumps({"records": 0, "success_rate": 0.0}))
        return 0
    per_subtask_costs: dict[int, list[float]] = {}
    usage: dict[int, dict[int, int]] = {}
    for r in records:
        for p in r.provenance:
            per_subtask_costs.setdefault(p.subtask_index, []).append(p.registration_cost)
            usage.setdefault(p.subtask_index, {}).setdefault(p.source_demo_index, 0)
            usage[p.subtask_index][p.source_demo_index] += 1
    print(f"dataset: {args.data}")
    print(f"records: {len(records)}")
    if summary:
        print(
            f"attempts: {summary['attempts']}  successes: {summary['successes']}  "
            f"success_rate: {summary['success_rate']:.3f}"
        )
    for s in sorted(per_subtask_costs):
        print(f"subtask {s}: registration_cost histogram")
        for line in _histogram(per_subtask_costs[s]):
            print(line)
        uses = ", ".join(f"demo {d}: {c}" for d, c in sorted(usage[s].items()))
        print(f"subtask {s}: source usage {{{uses}}}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softgen",
        description="Generate deformable-manipulation demonstrations by warping "
        "source trajectories through fitted non-rigid fields.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a demonstration dataset")
    g.add_argument("--task", choices=list_tasks())
    g.add_argument("--method", choices=["warp", "rigid"])
    g.add_argument("--num", type=int, help="number of trials")
    g.add_argument("--seed", help="base seed (integer or 'canonical')")
    g.add_argument("--lambda", dest="lam", type=float, help="TPS regularization weight")
    g.add_argument("--out", required=True, help="output dataset (JSON Lines)")
    g.add_argument("--scripted", action="store_true", help="synthesize source demos")
    g.add_argument("--demos", nargs="+", help="source demo files")
    g.add_argument("--num-demos", type=int, help="scripted source demo count")
    g.add_argument("--save-demos", help="directory to save scripted demos")
    g.add_argument("--keep-failures", action="store_true")
    g.add_argument("--workers", type=int, help="parallel trial workers")
    g.add_argument("--config", help="JSON config file (flags take precedence)")
    g.set_defaults(fn=cmd_generate)

    r = sub.add_parser("replay", help="re-execute a dataset and check consistency")
    r.add_argument("--data", required=True)
    r.set_defaults(fn=cmd_replay)

    c = sub.add_parser("register", help="fit a warp field between two configs")
    c.add_argument("--src", required=True)
    c.add_argument("--tgt", required=True)
    c.add_argument("--method", choices=["tps", "rpm"], default="tps")
    c.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    c.add_argument("--out")
    c.set_defaults(fn=cmd_register)

    w = sub.add_parser("warp-dump", help="dump warped poses and a field probe grid")
    w.add_argument("--src", required=True)
    w.add_argument("--tgt", required=True)
    w.add_argument("--demo", help="source demo file to warp")
    w.add_argument("--subtask", type=int, default=0)
    w.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    w.add_argument("--out")
    w.set_defaults(fn=cmd_warp_dump)

    s = sub.add_parser("stats", help="per-subtask cost histograms and source usage")
    s.add_argument("--data", required=True)
    s.set_defaults(fn=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SchemaMismatch as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 4
    except (OSError, json.JSONDecodeError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return 3
    except (SoftGenError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
