"""Artifact writers: CSV, summary text, attention maps, checkpoints.

Every CSV cell is rendered with repr() for floats so identical runs are
bit-identical on disk. Wall-clock numbers never enter a CSV; they go to
timing.txt, which is expected to differ between runs.
"""

from __future__ import annotations

import os
from typing import Dict, Iterable, List

from .. import checkpoint
from ..integrator import run_episode
from .experiments import RESULT_COLUMNS, RunArtifacts


def _cell(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, columns: Iterable[str], rows: Iterable[Dict]) -> None:
    columns = list(columns)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_cell(row[c]) for c in columns) + "\n")


def write_results_csv(path, records) -> None:
    write_csv(path, RESULT_COLUMNS, records)


def summary_lines(config, art: RunArtifacts) -> List[str]:
    def fmt(v):
        return "n/a" if v is None else f"{v:.4f}"

    lines = ["configuration:"]
    for key in sorted(vars(config)):
        lines.append(f"  {key} = {getattr(config, key)}")
    lines.append(f"memoryless ceiling = {art.ceiling:.4f} "
                 f"over {art.ceiling_n} depth>=1 turns")
    lines.append("records:")
    for r in art.records:
        if r["status"] != "ok":
            lines.append(f"  {r['variant']} seed={r['seed']}: {r['status']}")
            continue
        lines.append(
            f"  {r['variant']:<10} seed={r['seed']} n_m={r['n_m']} "
            f"acc={fmt(r['overall_accuracy'])} mda={fmt(r['mda'])} "
            f"(n={r['mda_n']}) episode_success={fmt(r['episode_success'])} "
            f"params={r['params_total']}")
    by_cell = {(r["variant"], r["seed"]): r for r in art.records
               if r["status"] == "ok"}
    gap_seeds = sorted(s for (v, s) in by_cell if v == "full"
                       and ("base", s) in by_cell)
    if gap_seeds:
        lines.append("full vs base depth>=1 accuracy gap:")
        for s in gap_seeds:
            gap = by_cell[("full", s)]["mda"] - by_cell[("base", s)]["mda"]
            lines.append(f"  seed {s}: {gap:+.4f}")
    return lines


def write_lines(path, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


def write_timing(path, rows) -> None:
    lines = ["wall-clock timing (not reproducible; excluded from CSVs)"]
    for r in rows:
        lines.append(f"{r['variant']}: {r['ms_per_turn_mean']:.3f} ms/turn "
                     f"(std {r['ms_per_turn_std']:.3f}, "
                     f"n={r['n_turns']} turns, warmup discarded)")
    write_lines(path, lines)


def _safe(name: str) -> str:
    return name.replace("+", "plus").replace(" ", "_")


def dump_attention_maps(out_dir, art: RunArtifacts, n_turns: int = 3) -> None:
    """Write the focus map for the first few turns of the first eval
    episode, one CSV per (variant, seed, turn)."""
    os.makedirs(out_dir, exist_ok=True)
    if not art.eval_episodes:
        return
    episode = art.eval_episodes[0]
    for (variant, seed), params in sorted(art.models.items()):
        if not params.flags.use_avfg:
            continue
        internals = []
        run_episode(params, episode, internals_per_turn=internals)
        for i, turn_int in enumerate(internals[:n_turns], start=1):
            amap = turn_int["attention_map"]
            grid = amap.A.data.reshape(amap.resolution)
            rows = [{"col" + str(j): float(x) for j, x in enumerate(row)}
                    for row in grid]
            cols = ["col" + str(j) for j in range(grid.shape[1])]
            path = os.path.join(
                out_dir, f"{_safe(variant)}_seed{seed}_turn{i}.csv")
            write_csv(path, cols, rows)


def write_checkpoints(out_dir, art: RunArtifacts) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for (variant, seed), params in sorted(art.models.items()):
        path = os.path.join(out_dir, f"{_safe(variant)}_seed{seed}.camvr")
        checkpoint.save_model(path, params)
        paths.append(path)
    return paths
