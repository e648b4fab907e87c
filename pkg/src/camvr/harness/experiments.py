"""Experiment runners: train/evaluate variants, sweeps, reports.

All runners are deterministic per (config, seed). Wall-clock timing is the
one exception and is kept out of every CSV (see reporting); it lives in
its own plain-text artifact.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .. import accounting, taskgen
from .. import avfg as avfg_mod
from .. import vcmu as vcmu_mod
from ..errors import ConfigError, ContractError, TrainingDiverged
from ..integrator import (ModelFlags, ModelParams, decode, forward_turn,
                          embed_tokens, init_model, run_episode, train,
                          build_decoder_input, project_streams)
from ..numcore import ops
from ..numcore.gradcheck import gradcheck_report
from ..numcore.tensor import Tensor
from .config import ExperimentConfig

ABLATION_VARIANTS = ("base", "+VCMU", "+AVFG", "full")
GRANULARITY_VARIANTS = ("VCMU-only", "global", "coarse", "native")
MEMORY_SLOT_SWEEP = (4, 8, 16, 32)
BUCKETS = ("1", "2-3", "4+")


def bucket_of(turn_pos: int) -> str:
    if turn_pos <= 1:
        return "1"
    return "2-3" if turn_pos <= 3 else "4+"


def variant_flags(name: str, config: ExperimentConfig) -> ModelFlags:
    """Flags for a named ablation/granularity variant."""
    gran = config.granularity
    mem = config.memory_init
    table = {
        "base": ModelFlags(False, False, gran, mem),
        "+VCMU": ModelFlags(True, False, gran, mem),
        "+AVFG": ModelFlags(False, True, gran, mem),
        "full": ModelFlags(True, True, gran, mem),
        "VCMU-only": ModelFlags(True, False, gran, mem),
        "global": ModelFlags(True, True, "global", mem),
        "coarse": ModelFlags(True, True, "coarse", mem),
        "native": ModelFlags(True, True, "native", mem),
    }
    if name not in table:
        raise ConfigError(f"unknown variant {name!r}")
    return table[name]


# -- evaluation ------------------------------------------------------------

@dataclass
class EvalOutcome:
    n_turns: int = 0
    n_correct: int = 0
    mda_n: int = 0
    mda_correct: int = 0
    n_episodes: int = 0
    n_episodes_all_correct: int = 0
    buckets: Dict[str, Dict[str, int]] = field(default_factory=dict)

    def accuracy(self) -> float:
        return self.n_correct / self.n_turns

    def mda(self) -> Optional[float]:
        return self.mda_correct / self.mda_n if self.mda_n else None

    def episode_success(self) -> float:
        return self.n_episodes_all_correct / self.n_episodes

    def bucket_acc(self, b: str) -> Optional[float]:
        s = self.buckets[b]
        return s["correct"] / s["n"] if s["n"] else None

    def bucket_mda(self, b: str) -> Optional[float]:
        s = self.buckets[b]
        return s["mda_correct"] / s["mda_n"] if s["mda_n"] else None


def _audit_turn(params: ModelParams, internals, m_init) -> None:
    """Ablation flag audits; enforced, not assumed."""
    if not params.flags.use_vcmu:
        if internals["memory"].M.data.tobytes() != m_init.tobytes():
            raise ContractError("flag audit failed: memory changed "
                                "with use_vcmu disabled")
    if not params.flags.use_avfg:
        if internals["v_mod"] is not internals["v_raw"]:
            raise ContractError("flag audit failed: features modulated "
                                "with use_avfg disabled")


def evaluate(params: ModelParams, episodes, audit: bool = True) \
        -> EvalOutcome:
    """Per-turn evaluation with bucket stats and ablation audits."""
    out = EvalOutcome(buckets={
        b: {"n": 0, "correct": 0, "mda_n": 0, "mda_correct": 0}
        for b in BUCKETS})
    needs_audit = audit and not (params.flags.use_vcmu
                                 and params.flags.use_avfg)
    m_init = vcmu_mod.init_memory(params.dims.n_m, params.dims.d_m,
                                  params.flags.memory_mode,
                                  params.vcmu).M.data
    for ep in episodes:
        internals = [] if needs_audit else None
        records = run_episode(params, ep, internals_per_turn=internals)
        if needs_audit:
            for turn_int in internals:
                _audit_turn(params, turn_int, m_init)
        all_ok = True
        for rec in records:
            b = out.buckets[bucket_of(rec["turn"])]
            hit = int(rec["correct"])
            out.n_turns += 1
            out.n_correct += hit
            b["n"] += 1
            b["correct"] += hit
            if rec["depth"] >= 1:
                out.mda_n += 1
                out.mda_correct += hit
                b["mda_n"] += 1
                b["mda_correct"] += hit
            all_ok = all_ok and rec["correct"]
        out.n_episodes += 1
        out.n_episodes_all_correct += int(all_ok)
    return out


def time_per_turn(params: ModelParams, episodes, *, min_turns: int = 100,
                  warmup: int = 10) -> Tuple[float, float, int]:
    """Mean/stdev forward wall time in ms per turn, single process.

    The first `warmup` turn timings are discarded.
    """
    samples = []
    while len(samples) < min_turns + warmup:
        for ep in episodes:
            mem = vcmu_mod.init_memory(params.dims.n_m, params.dims.d_m,
                                       params.flags.memory_mode, params.vcmu)
            for turn in ep.turns:
                t0 = time.perf_counter()
                _, mem, _, _ = forward_turn(turn, mem, params)
                samples.append((time.perf_counter() - t0) * 1e3)
                if not params.flags.use_vcmu:
                    mem = vcmu_mod.MemoryState(M=mem.M,
                                               turn_index=mem.turn_index + 1)
            if len(samples) >= min_turns + warmup:
                break
    kept = np.asarray(samples[warmup:])
    return float(kept.mean()), float(kept.std()), kept.size


# -- records ---------------------------------------------------------------

# results.csv schema; timing is deliberately absent (not reproducible).
RESULT_COLUMNS = (
    "variant", "seed", "n_m", "granularity", "use_vcmu", "use_avfg",
    "memory_init", "steps", "status",
    "overall_accuracy", "episode_success", "mda", "mda_n",
    "ceiling", "ceiling_n",
    "acc_b1", "n_b1", "mda_b1", "mda_n_b1",
    "acc_b23", "n_b23", "mda_b23", "mda_n_b23",
    "acc_b4p", "n_b4p", "mda_b4p", "mda_n_b4p",
    "loss_final", "params_total",
    "params_vcmu_encoder", "params_vcmu_gate", "params_vcmu_retrieval",
    "params_vcmu_memory", "params_avfg", "params_projections",
    "params_decoder", "params_head",
)


def _reconcile(outcome: EvalOutcome) -> None:
    # bucket weighted means must reproduce the overall numbers exactly
    acc = sum(outcome.buckets[b]["correct"] for b in BUCKETS) \
        / outcome.n_turns
    if abs(acc - outcome.accuracy()) > 1e-9:
        raise ContractError("bucket accuracies do not reconcile "
                            "with overall accuracy")
    mda_n = sum(outcome.buckets[b]["mda_n"] for b in BUCKETS)
    if mda_n != outcome.mda_n:
        raise ContractError("bucket depth>=1 counts do not reconcile")


def make_record(variant: str, seed: int, params: ModelParams,
                outcome: Optional[EvalOutcome], *, steps: int,
                ceiling: float, ceiling_n: int,
                loss_final: Optional[float],
                status: str = "ok") -> Dict[str, object]:
    counts = accounting.verify_accounting(params)
    rec = dict.fromkeys(RESULT_COLUMNS)
    rec.update(
        variant=variant, seed=seed, n_m=params.dims.n_m,
        granularity=params.flags.granularity,
        use_vcmu=params.flags.use_vcmu, use_avfg=params.flags.use_avfg,
        memory_init=params.flags.memory_mode, steps=steps, status=status,
        ceiling=ceiling, ceiling_n=ceiling_n, loss_final=loss_final,
        params_total=sum(counts.values()),
    )
    for comp, n in counts.items():
        rec[f"params_{comp}"] = n
    if outcome is not None:
        _reconcile(outcome)
        rec.update(
            overall_accuracy=outcome.accuracy(),
            episode_success=outcome.episode_success(),
            mda=outcome.mda(), mda_n=outcome.mda_n,
            acc_b1=outcome.bucket_acc("1"),
            n_b1=outcome.buckets["1"]["n"],
            mda_b1=outcome.bucket_mda("1"),
            mda_n_b1=outcome.buckets["1"]["mda_n"],
            acc_b23=outcome.bucket_acc("2-3"),
            n_b23=outcome.buckets["2-3"]["n"],
            mda_b23=outcome.bucket_mda("2-3"),
            mda_n_b23=outcome.buckets["2-3"]["mda_n"],
            acc_b4p=outcome.bucket_acc("4+"),
            n_b4p=outcome.buckets["4+"]["n"],
            mda_b4p=outcome.bucket_mda("4+"),
            mda_n_b4p=outcome.buckets["4+"]["mda_n"],
        )
    return rec


# -- runners ---------------------------------------------------------------

@dataclass
class RunArtifacts:
    records: List[Dict[str, object]]
    models: Dict[Tuple[str, int], ModelParams]
    train_episodes: list
    eval_episodes: list
    ceiling: float
    ceiling_n: int
    timings: Dict[Tuple[str, int], Tuple[float, float, int]] \
        = field(default_factory=dict)

    @property
    def any_failed(self) -> bool:
        return any(r["status"] != "ok" for r in self.records)


def _make_data(config: ExperimentConfig):
    train_eps, eval_eps = taskgen.make_splits(
        config.train_episodes, config.eval_episodes, config.data_seed,
        config.gen_config())
    ceiling, ceiling_n = taskgen.memoryless_ceiling(eval_eps)
    return train_eps, eval_eps, ceiling, ceiling_n


def _run_cell(config: ExperimentConfig, variant: str, flags: ModelFlags,
              seed: int, data, *, n_m=None, timing: bool = False):
    """One (variant, seed) training/eval cell."""
    train_eps, eval_eps, ceiling, ceiling_n = data
    dims = config.model_dims(n_m=n_m)
    params = init_model(dims, flags, seed=seed)
    try:
        curve = train(train_eps, params, steps=config.steps, lr=config.lr,
                      batch_size=config.batch_size, seed=seed)
    except TrainingDiverged as exc:
        rec = make_record(variant, seed, params, None, steps=config.steps,
                          ceiling=ceiling, ceiling_n=ceiling_n,
                          loss_final=None, status=f"failed: {exc}")
        return rec, params, None
    outcome = evaluate(params, eval_eps, audit=True)
    loss_final = curve[-1] if curve else None
    rec = make_record(variant, seed, params, outcome, steps=config.steps,
                      ceiling=ceiling, ceiling_n=ceiling_n,
                      loss_final=loss_final)
    timing_row = time_per_turn(params, eval_eps) if timing else None
    return rec, params, timing_row


def _run_variants(config: ExperimentConfig, cells, timing: bool) \
        -> RunArtifacts:
    """cells: ordered (variant_name, flags, n_m or None) triples."""
    data = _make_data(config)
    art = RunArtifacts(records=[], models={},
                       train_episodes=data[0], eval_episodes=data[1],
                       ceiling=data[2], ceiling_n=data[3])
    for variant, flags, n_m in cells:
        for seed in config.seeds:
            rec, params, t = _run_cell(config, variant, flags, seed, data,
                                       n_m=n_m, timing=timing)
            art.records.append(rec)
            art.models[(variant, seed)] = params
            if t is not None:
                art.timings[(variant, seed)] = t
    return art


def run_experiment(config: ExperimentConfig, *, timing: bool = False) \
        -> RunArtifacts:
    """Train/evaluate the configured variant, one record per seed."""
    config.validate()
    flags = config.model_flags()
    name = {(False, False): "base", (True, False): "+VCMU",
            (False, True): "+AVFG", (True, True): "full"}[
        (flags.use_vcmu, flags.use_avfg)]
    return _run_variants(config, [(name, flags, None)], timing)


def ablate(config: ExperimentConfig, *, timing: bool = False) \
        -> RunArtifacts:
    """The four-variant comparison with shared seeds and data."""
    config.validate()
    cells = [(v, variant_flags(v, config), None) for v in ABLATION_VARIANTS]
    return _run_variants(config, cells, timing)


def sweep_memory(config: ExperimentConfig, slots=MEMORY_SLOT_SWEEP) \
        -> RunArtifacts:
    """Full model trained at each memory capacity, shared seeds/data."""
    config.validate()
    if not slots:
        raise ConfigError("slot list must be nonempty")
    if not config.use_vcmu:
        raise ConfigError("use_vcmu must be true for a memory sweep")
    flags = config.model_flags()
    cells = [("full", flags, int(n)) for n in slots]
    return _run_variants(config, cells, timing=False)


def sweep_granularity(config: ExperimentConfig) -> RunArtifacts:
    """Focus-strategy comparison: no AVFG, global, coarse, native."""
    config.validate()
    cells = [(v, variant_flags(v, config), None)
             for v in GRANULARITY_VARIANTS]
    return _run_variants(config, cells, timing=False)


# -- per-turn report -------------------------------------------------------

def per_turn_table(records) -> List[str]:
    """Bucket table plus the turn-robustness drop comparison.

    Emits accuracy and depth>=1 accuracy per bucket with explicit n=0
    markers. Bucket 1 never contains depth>=1 turns (there is no earlier
    turn to refer back to), so the drop comparison uses bucket accuracy;
    the empty-bucket MDA rows are still printed.
    """
    def fmt(v, n):
        return "n/a(n=0)" if n == 0 or v is None else f"{v:.4f}"

    lines = ["per-turn buckets: 1 | 2-3 | 4+"]
    for rec in records:
        if rec["status"] != "ok":
            lines.append(f"{rec['variant']} seed={rec['seed']}: "
                         f"{rec['status']}")
            continue
        lines.append(f"{rec['variant']} seed={rec['seed']}:")
        for b, key in (("1", "b1"), ("2-3", "b23"), ("4+", "b4p")):
            acc = fmt(rec[f"acc_{key}"], rec[f"n_{key}"])
            mda = fmt(rec[f"mda_{key}"], rec[f"mda_n_{key}"])
            lines.append(f"  bucket {b:<3} n={rec[f'n_{key}']:<4} "
                         f"acc={acc} depth>=1 acc={mda} "
                         f"(n={rec[f'mda_n_{key}']})")
    by_cell = {(r["variant"], r["seed"]): r for r in records
               if r["status"] == "ok"}
    seeds = sorted({s for (_, s) in by_cell})
    pairs = [(v, s) for v in ("full", "base") for s in seeds
             if (v, s) in by_cell]
    if any(v == "full" for v, _ in pairs) and \
            any(v == "base" for v, _ in pairs):
        lines.append("drop report (bucket-1 minus bucket-4+ accuracy; "
                     "bucket-1 has no depth>=1 turns, so the robustness "
                     "comparison uses bucket accuracy):")
        for s in seeds:
            if ("full", s) not in by_cell or ("base", s) not in by_cell:
                continue
            fu, ba = by_cell[("full", s)], by_cell[("base", s)]
            fdrop = fu["acc_b1"] - fu["acc_b4p"]
            bdrop = ba["acc_b1"] - ba["acc_b4p"]
            lines.append(f"  seed {s}: full drop={fdrop:+.4f} "
                         f"base drop={bdrop:+.4f} "
                         f"full_smaller={fdrop < bdrop}")
    return lines


# -- efficiency ------------------------------------------------------------

def efficiency_report(config: ExperimentConfig):
    """Per-variant parameter accounting plus forward timing.

    Returns (param_rows, timing_rows); the former is deterministic, the
    latter is measurement and must stay out of reproducible artifacts.
    """
    config.validate()
    data_cfg = config.gen_config()
    eval_eps = [taskgen.gen_episode(data_cfg, seed)
                for seed in range(max(20, -(-110 // config.turns)))]
    param_rows, timing_rows = [], []
    for variant in ABLATION_VARIANTS:
        flags = variant_flags(variant, config)
        params = init_model(config.model_dims(), flags,
                            seed=config.seeds[0])
        counts = accounting.verify_accounting(params)
        row = {"variant": variant, "params_total": sum(counts.values())}
        row.update({f"params_{k}": v for k, v in counts.items()})
        param_rows.append(row)
        mean_ms, std_ms, n = time_per_turn(params, eval_eps)
        timing_rows.append({"variant": variant, "ms_per_turn_mean": mean_ms,
                            "ms_per_turn_std": std_ms, "n_turns": n})
    return param_rows, timing_rows


# -- gradcheck -------------------------------------------------------------

def _tiny_dims():
    from ..integrator import ModelDims
    return ModelDims(n_m=2, d_m=3, d_e=3, d_v=3, d_t=3, d_raw=8,
                     d_dec=4, c_h=2, vocab=5, token_vocab=9, grid=(2, 2))


def _mean_all(t: Tensor) -> Tensor:
    return ops.scale(ops.sum_all(t), 1.0 / t.data.size)


def gradcheck_blocks() -> Dict[str, float]:
    """Finite-difference check per component and for the 2-turn pipeline.

    Returns block name -> max relative gradient error.
    """
    dims = _tiny_dims()
    params = init_model(dims, ModelFlags(), seed=0)
    rng = np.random.default_rng(7)
    h, w = dims.grid
    v_raw = Tensor(rng.standard_normal((h, w, dims.d_raw)))
    v_rows = Tensor(rng.standard_normal((h * w, dims.d_v)))
    t_emb = Tensor(rng.standard_normal((3, dims.d_t)))
    m_prev = Tensor(rng.standard_normal((dims.n_m, dims.d_m)))
    c_rows = Tensor(rng.standard_normal((3, dims.d_m)))
    vc, av = params.vcmu, params.avfg

    def named(pairs):
        return dict(pairs)

    def enc():
        return _mean_all(vcmu_mod.encode_context(v_rows, t_emb, vc))

    def gate():
        return _mean_all(vcmu_mod.gated_update(
            vcmu_mod.encode_context(v_rows, t_emb, vc), m_prev, vc))

    def retr():
        return _mean_all(vcmu_mod.retrieve(t_emb, m_prev, vc).C)

    def focus():
        amap = avfg_mod.gen_attention_map(
            v_raw, avfg_mod.pool_context(c_rows), av, (h, w))
        return _mean_all(avfg_mod.modulate(v_raw, amap))

    def dec():
        v_pp, t_pp, c_pp = project_streams(v_raw, t_emb, c_rows, params)
        v_pp = ops.add(v_pp, Tensor(params.pos_grid))
        logits = decode(build_decoder_input(v_pp, t_pp, c_pp), params)
        return ops.cross_entropy(logits, 1)

    episode = _gradcheck_episode(dims, rng)
    from ..integrator import episode_loss

    def pipeline():
        return episode_loss(params, episode)

    enc_params = named(p for p in vc.named_tensors()
                       if p[0].split(".")[1].startswith(("raw", "enc")))
    gate_params = named(p for p in vc.named_tensors()
                        if p[0].split(".")[1] in
                        ("w_g", "b_g", "w_m", "b_m"))
    retr_params = named(p for p in vc.named_tensors()
                        if p[0].split(".")[1] in ("w_q", "w_k", "w_v"))
    blocks = {
        "encode_context": (enc, {**enc_params, "in.v": v_rows,
                                 "in.t": t_emb}),
        "gated_update": (gate, {**gate_params, "in.m_prev": m_prev}),
        "retrieve": (retr, {**retr_params, "in.t": t_emb,
                            "in.m": m_prev}),
        "focus_map_and_modulate": (focus, named(
            av.named_tensors("native")) | {"in.c": c_rows}),
        "project_decode_loss": (dec, named(params.dec.named_tensors())
                                | {"proj_v": params.proj_v,
                                   "head": params.head, "in.t": t_emb}),
        "pipeline_2turn": (pipeline, named(params.named_tensors())),
    }
    return gradcheck_report(blocks)


def _gradcheck_episode(dims, rng):
    """Two synthetic turns shaped like the task, for the recurrence check."""
    from types import SimpleNamespace
    h, w = dims.grid
    turns = []
    for t in range(2):
        turns.append(SimpleNamespace(
            visual=rng.standard_normal((h, w, dims.d_raw)),
            query_tokens=tuple(int(x) for x in
                               rng.integers(0, dims.token_vocab, size=3)),
            target_answer_id=int(rng.integers(0, dims.vocab)),
            dependency_depth=t,
        ))
    return SimpleNamespace(turns=tuple(turns), seed=0)
