"""Command-line interface: instance generation, training, benchmarking and
single-schedule export.

Every command writes a manifest JSON next to its outputs recording the
resolved configuration, seed, package version and wallclock, so a run can
be reproduced from the manifest alone. Errors exit nonzero with a single
`fjspt: error: ...` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import GAConfig, ga_solve, run_rule, RULES
from .decoder import rollout
from .environment import (apply_action, final_schedule, reset,
                          schedule_to_csv, verify_schedule)
from .instance import generate_instance, load_instance, write_instance
from .report import eval_summary_figure, gantt_figure, training_curve_figure
from .training import TrainConfig, gap, load_checkpoint, train

LEARNED_METHOD = "hgs"
ALL_METHODS = (LEARNED_METHOD, "spt", "lpt", "fifo", "ga")


class CliError(RuntimeError):
    pass


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    version: str = __version__
    wallclock: float = 0.0
    outputs: list = field(default_factory=list)

    def write(self, path):
        Path(path).write_text(json.dumps({
            "command": self.command, "config": self.config, "seed": self.seed,
            "version": self.version, "wallclock": self.wallclock,
            "outputs": [str(p) for p in self.outputs],
        }, indent=1) + "\n", encoding="utf-8")


def _default_seed():
    env = os.environ.get("HGS_SEED")
    return int(env) if env else 0


def _add_seed(parser):
    parser.add_argument("--seed", type=int, default=None,
                        help="root seed (default: $HGS_SEED or 0)")


def _resolve_seed(args):
    return args.seed if args.seed is not None else _default_seed()


def cmd_generate(args):
    t0 = time.perf_counter()
    seed = _resolve_seed(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for i in range(args.count):
        inst = generate_instance(args.n, args.m, args.v, seed + i)
        path = out_dir / f"{inst.name}.json"
        write_instance(inst, path)
        outputs.append(path)
    manifest = RunManifest(command="generate", seed=seed, config={
        "n": args.n, "m": args.m, "v": args.v, "count": args.count,
        "out_dir": str(out_dir)})
    manifest.outputs = outputs
    manifest.wallclock = time.perf_counter() - t0
    manifest.write(out_dir / "manifest.json")
    print(f"wrote {len(outputs)} instances to {out_dir}")
    return 0


def cmd_train(args):
    t0 = time.perf_counter()
    cfg = TrainConfig.from_json(args.config)
    if args.resume:
        cfg.resume = True
    if not cfg.checkpoint:
        raise CliError("config must set a checkpoint path")
    for path in (cfg.checkpoint, cfg.log):
        if path:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
    result = train(cfg, progress=lambda row: print(
        f"episode {row['episode']}: "
        f"greedy {row['mean_greedy_makespan']:.2f}", flush=True))
    outputs = [cfg.checkpoint]
    if cfg.log:
        outputs.append(cfg.log)
        curve = Path(cfg.log).with_suffix(".png")
        training_curve_figure(result.log_rows, curve)
        outputs.append(curve)
    manifest = RunManifest(command="train", seed=cfg.seed, config=cfg.to_dict())
    manifest.outputs = outputs
    manifest.wallclock = time.perf_counter() - t0
    manifest.write(Path(cfg.checkpoint).with_suffix(".manifest.json"))
    print(f"trained {result.log_rows[-1]['episode']} episodes, "
          f"final greedy {result.log_rows[-1]['mean_greedy_makespan']:.2f}")
    return 0


def _solve_one(inst, method, seed, checkpoint=None, ga_generations=None):
    """Run one method on one instance; returns (schedule, makespan, seconds)."""
    t0 = time.perf_counter()
    if method in RULES:
        state = run_rule(inst, method)
        sched = final_schedule(state)
        span = sched.makespan
    elif method == "ga":
        if ga_generations:
            cfg = GAConfig(seed=seed, generations=ga_generations)
        else:
            cfg = GAConfig(seed=seed)
        sched, span, _ = ga_solve(inst, cfg)
    elif method == LEARNED_METHOD:
        if checkpoint is None:
            raise CliError(f"method {LEARNED_METHOD!r} requires --checkpoint")
        store, model_cfg = checkpoint
        traj = rollout(inst, store, model_cfg, mode="greedy", keep_features=False)
        state = reset(inst)
        for step in traj.steps:
            apply_action(state, step.action)
        sched = final_schedule(state)
        span = sched.makespan
    else:
        raise CliError(f"unknown method {method!r}; expected one of {ALL_METHODS}")
    return sched, span, time.perf_counter() - t0


def cmd_eval(args):
    t0 = time.perf_counter()
    seed = _resolve_seed(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in ALL_METHODS:
            raise CliError(f"unknown method {m!r}; expected one of {ALL_METHODS}")
    inst_paths = sorted(Path(args.instances).glob("*.json"))
    inst_paths = [p for p in inst_paths if p.name != "manifest.json"]
    if not inst_paths:
        raise CliError(f"no instance files found in {args.instances}")
    checkpoint = None
    if LEARNED_METHOD in methods:
        if not args.checkpoint:
            raise CliError(f"method {LEARNED_METHOD!r} requires --checkpoint")
        checkpoint = load_checkpoint(args.checkpoint)

    instances = [load_instance(p) for p in inst_paths]
    results = {}  # (name, method) -> (makespan, runtime)
    for inst in instances:
        for method in methods:
            _, span, secs = _solve_one(inst, method, seed, checkpoint,
                                       ga_generations=args.ga_generations)
            results[(inst.name, method)] = (span, secs)

    rows = []
    for inst in instances:
        best = min(results[(inst.name, m)][0] for m in methods)
        for method in methods:
            span, secs = results[(inst.name, method)]
            rows.append({"instance": inst.name, "method": method,
                         "makespan": span, "runtime_s": secs,
                         "gap_pct": gap(span, best),
                         "size": f"{inst.n}x{inst.m}x{inst.v}"})
    # per-size mean rows; the gap compares mean makespans, best method = 0
    mean_rows = []
    for size in sorted({r["size"] for r in rows}):
        spans_by_method = {
            m: float(np.mean([r["makespan"] for r in rows
                              if r["size"] == size and r["method"] == m]))
            for m in methods}
        times_by_method = {
            m: float(np.mean([r["runtime_s"] for r in rows
                              if r["size"] == size and r["method"] == m]))
            for m in methods}
        best = min(spans_by_method.values())
        for method in methods:
            mean_rows.append({"instance": f"mean[{size}]", "method": method,
                              "makespan": spans_by_method[method],
                              "runtime_s": times_by_method[method],
                              "gap_pct": gap(spans_by_method[method], best),
                              "size": size})

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["instance", "method", "makespan", "runtime_s", "gap_pct"])
        for r in rows + mean_rows:
            w.writerow([r["instance"], r["method"], r["makespan"],
                        f"{r['runtime_s']:.4f}", f"{r['gap_pct']:.2f}"])
    figure = out.with_suffix(".png")
    eval_summary_figure(mean_rows, figure)

    manifest = RunManifest(command="eval", seed=seed, config={
        "instances": str(args.instances), "methods": methods,
        "checkpoint": args.checkpoint, "out": str(out),
        "ga_generations": args.ga_generations})
    manifest.outputs = [out, figure]
    manifest.wallclock = time.perf_counter() - t0
    manifest.write(out.with_suffix(".manifest.json"))
    print(f"wrote {out} ({len(rows)} result rows, {len(mean_rows)} mean rows)")
    return 0


def cmd_solve(args):
    t0 = time.perf_counter()
    seed = _resolve_seed(args)
    inst = load_instance(args.instance)
    checkpoint = load_checkpoint(args.checkpoint) if args.checkpoint else None
    sched, span, _ = _solve_one(inst, args.method, seed, checkpoint,
                                ga_generations=args.ga_generations)
    problems = verify_schedule(inst, sched)
    if problems:
        raise CliError(f"internal error: produced an infeasible schedule: {problems[0]}")
    outputs = []
    for out in args.out:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        if out.suffix == ".csv":
            schedule_to_csv(sched, out)
        elif out.suffix == ".svg":
            gantt_figure(inst, sched, out)
        else:
            raise CliError(f"unsupported output extension {out.suffix!r} "
                           f"(use .csv or .svg)")
        outputs.append(out)
    manifest = RunManifest(command="solve", seed=seed, config={
        "instance": str(args.instance), "method": args.method,
        "checkpoint": args.checkpoint, "out": [str(o) for o in args.out]})
    manifest.outputs = outputs
    manifest.wallclock = time.perf_counter() - t0
    base = outputs[0] if outputs else Path(args.instance)
    manifest.write(Path(base).with_suffix(".manifest.json"))
    print(f"{args.method} makespan {span} on {inst.name}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fjspt",
        description="Schedulers for the flexible job shop with transport")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write random instance files")
    p.add_argument("--n", type=int, required=True, help="number of jobs")
    p.add_argument("--m", type=int, required=True, help="number of machines")
    p.add_argument("--v", type=int, required=True, help="number of vehicles")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    _add_seed(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the graph scheduler")
    p.add_argument("--config", required=True, help="JSON training config")
    p.add_argument("--resume", action="store_true",
                   help="continue from the config's checkpoint if present")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="benchmark methods over an instance directory")
    p.add_argument("--instances", required=True, help="directory of instance JSON")
    p.add_argument("--methods", default="spt,lpt,fifo",
                   help=f"comma list from {','.join(ALL_METHODS)}")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--ga-generations", type=int, default=None)
    _add_seed(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("solve", help="solve one instance and export the schedule")
    p.add_argument("--instance", required=True)
    p.add_argument("--method", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", action="append", required=True,
                   help="output path (.csv schedule or .svg Gantt); repeatable")
    p.add_argument("--ga-generations", type=int, default=None)
    _add_seed(p)
    p.set_defaults(func=cmd_solve)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # single-line machine-parsable failure
        print(f"fjspt: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
