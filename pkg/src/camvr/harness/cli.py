"""Command-line entry point.

Subcommands: run, ablate, sweep-mem, sweep-granularity, per-turn,
efficiency, gradcheck, gen-data. Exit codes: 0 success, 1 invalid
config/arguments, 2 gradcheck threshold breach, 3 training divergence.
"""

from __future__ import annotations

import argparse
import os
import sys

from .. import accounting, taskgen
from ..errors import CamvrError
from . import experiments as ex
from . import reporting
from .config import ExperimentConfig, apply_overrides, load_config

GRADCHECK_THRESHOLD = 1e-4


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="camvr",
        description="Train and evaluate gated-memory dialogue models "
                    "on the synthetic grid task.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("run", "train/evaluate the configured variant"),
            ("ablate", "compare base, +VCMU, +AVFG and full variants"),
            ("sweep-mem", "full model across memory capacities"),
            ("sweep-granularity", "focus strategies: none/global/"
                                  "coarse/native"),
            ("per-turn", "bucketed per-turn accuracy for full vs base"),
            ("efficiency", "parameter accounting and per-turn timing"),
            ("gradcheck", "finite-difference check of every block"),
            ("gen-data", "write the episode splits as text")):
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", help="key=value config file")
        s.add_argument("--seed", type=int, help="single training seed")
        s.add_argument("--seeds", help="comma-separated training seeds")
        s.add_argument("--out", help="output directory")
        s.add_argument("--no-vcmu", action="store_true",
                       help="disable the memory unit")
        s.add_argument("--no-avfg", action="store_true",
                       help="disable spatial focus")
        s.add_argument("--granularity",
                       choices=("global", "coarse", "native"))
        s.add_argument("--mem-slots",
                       help="memory slots (comma list for sweep-mem)")
        s.add_argument("--steps", type=int, help="training steps")
    return p


def _configure(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None and args.seeds:
        raise SystemExit("pass --seed or --seeds, not both")
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    if args.seeds:
        overrides["seeds"] = args.seeds
    if args.out:
        overrides["out_dir"] = args.out
    if args.no_vcmu:
        overrides["use_vcmu"] = False
    if args.no_avfg:
        overrides["use_avfg"] = False
    if args.granularity:
        overrides["granularity"] = args.granularity
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.mem_slots and args.command != "sweep-mem":
        overrides["n_m"] = args.mem_slots
    return apply_overrides(config, overrides).validate()


def _emit_standard(config, art, out_dir, extra_lines=()) -> None:
    os.makedirs(out_dir, exist_ok=True)
    reporting.write_results_csv(os.path.join(out_dir, "results.csv"),
                                art.records)
    lines = reporting.summary_lines(config, art)
    lines += list(extra_lines)
    reporting.write_lines(os.path.join(out_dir, "summary.txt"), lines)
    reporting.write_checkpoints(os.path.join(out_dir, "checkpoints"), art)
    reporting.dump_attention_maps(os.path.join(out_dir, "attention_maps"),
                                  art)


def _finish(art) -> int:
    return 3 if art.any_failed else 0


def _cmd_run(config) -> int:
    art = ex.run_experiment(config)
    _emit_standard(config, art, config.out_dir,
                   ex.per_turn_table(art.records))
    return _finish(art)


def _cmd_ablate(config) -> int:
    art = ex.ablate(config)
    _emit_standard(config, art, config.out_dir,
                   ex.per_turn_table(art.records))
    return _finish(art)


def _cmd_sweep_mem(config, slots) -> int:
    art = ex.sweep_memory(config, slots)
    lines = ["capacity curve (n_m -> depth>=1 accuracy by seed):"]
    for rec in art.records:
        if rec["status"] == "ok":
            lines.append(f"  n_m={rec['n_m']} seed={rec['seed']} "
                         f"mda={rec['mda']:.4f}")
    _emit_standard(config, art, config.out_dir, lines)
    return _finish(art)


def _cmd_sweep_granularity(config) -> int:
    art = ex.sweep_granularity(config)
    _emit_standard(config, art, config.out_dir,
                   ex.per_turn_table(art.records))
    return _finish(art)


def _cmd_per_turn(config) -> int:
    cells = [(v, ex.variant_flags(v, config), None) for v in
             ("base", "full")]
    art = ex._run_variants(config, cells, timing=False)
    table = ex.per_turn_table(art.records)
    os.makedirs(config.out_dir, exist_ok=True)
    reporting.write_results_csv(
        os.path.join(config.out_dir, "results.csv"), art.records)
    reporting.write_lines(os.path.join(config.out_dir, "per_turn.txt"),
                          table)
    reporting.write_lines(os.path.join(config.out_dir, "summary.txt"),
                          reporting.summary_lines(config, art) + table)
    return _finish(art)


def _cmd_efficiency(config) -> int:
    param_rows, timing_rows = ex.efficiency_report(config)
    os.makedirs(config.out_dir, exist_ok=True)
    cols = ["variant", "params_total"] + \
        [f"params_{c}" for c in accounting.COMPONENTS]
    reporting.write_csv(os.path.join(config.out_dir, "efficiency.csv"),
                        cols, param_rows)
    reporting.write_timing(os.path.join(config.out_dir, "timing.txt"),
                           timing_rows)
    for row in param_rows:
        print(f"{row['variant']}: {row['params_total']} parameters")
    for row in timing_rows:
        print(f"{row['variant']}: {row['ms_per_turn_mean']:.3f} ms/turn")
    return 0


def _cmd_gradcheck() -> int:
    errors = ex.gradcheck_blocks()
    worst = 0.0
    for name in sorted(errors):
        print(f"{name}: max relative error {errors[name]:.3e}")
        worst = max(worst, errors[name])
    if worst >= GRADCHECK_THRESHOLD:
        print(f"FAIL: worst {worst:.3e} >= {GRADCHECK_THRESHOLD:.0e}",
              file=sys.stderr)
        return 2
    print(f"OK: worst {worst:.3e} < {GRADCHECK_THRESHOLD:.0e}")
    return 0


def _cmd_gen_data(config) -> int:
    train_eps, eval_eps = taskgen.make_splits(
        config.train_episodes, config.eval_episodes, config.data_seed,
        config.gen_config())
    ceiling, n = taskgen.memoryless_ceiling(eval_eps)
    os.makedirs(config.out_dir, exist_ok=True)
    for name, eps in (("train.txt", train_eps), ("eval.txt", eval_eps)):
        reporting.write_lines(
            os.path.join(config.out_dir, name),
            [taskgen.episode_to_text(ep) for ep in eps])
    depth_hist = {}
    for ep in eval_eps:
        for t in ep.turns:
            depth_hist[t.dependency_depth] = \
                depth_hist.get(t.dependency_depth, 0) + 1
    stats = [f"train episodes = {len(train_eps)}",
             f"eval episodes = {len(eval_eps)}",
             f"memoryless ceiling = {repr(ceiling)} over {n} "
             f"depth>=1 turns"]
    stats += [f"eval depth {d} turns = {depth_hist[d]}"
              for d in sorted(depth_hist)]
    reporting.write_lines(os.path.join(config.out_dir, "stats.txt"), stats)
    print(f"wrote {len(train_eps)}+{len(eval_eps)} episodes to "
          f"{config.out_dir} (ceiling {ceiling:.4f})")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "gradcheck":
            return _cmd_gradcheck()
        config = _configure(args)
        if args.command == "run":
            return _cmd_run(config)
        if args.command == "ablate":
            return _cmd_ablate(config)
        if args.command == "sweep-mem":
            slots = ex.MEMORY_SLOT_SWEEP
            if args.mem_slots:
                slots = tuple(int(s) for s in args.mem_slots.split(","))
            return _cmd_sweep_mem(config, slots)
        if args.command == "sweep-granularity":
            return _cmd_sweep_granularity(config)
        if args.command == "per-turn":
            return _cmd_per_turn(config)
        if args.command == "efficiency":
            return _cmd_efficiency(config)
        if args.command == "gen-data":
            return _cmd_gen_data(config)
        raise AssertionError(args.command)
    except CamvrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
