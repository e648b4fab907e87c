"""Closed-form parameter accounting, cross-checked against live tensors.

Each component's count is written as an explicit formula in the model
dimensions. `verify_accounting` recomputes the same totals by tallying the
actual trainable tensors and fails hard on any mismatch, so the formulas
can never drift from the code.
"""

from __future__ import annotations

from typing import Dict

from .errors import ContractError

COMPONENTS = (
    "vcmu_encoder",
    "vcmu_gate",
    "vcmu_retrieval",
    "vcmu_memory",
    "avfg",
    "projections",
    "decoder",
    "head",
)


def component_param_counts(dims, flags) -> Dict[str, int]:
    """Analytic per-component trainable parameter counts."""
    d = dims
    counts = dict.fromkeys(COMPONENTS, 0)
    if flags.use_vcmu:
        counts["vcmu_encoder"] = (d.d_raw * d.d_v
                                  + d.d_v * d.d_e + d.d_e
                                  + d.d_t * d.d_e + d.d_e
                                  + 2 * d.d_e * d.d_e + d.d_e)
        # gate and candidate blocks share one shape: (D_e+D_m) x D_m plus bias
        counts["vcmu_gate"] = 2 * ((d.d_e + d.d_m) * d.d_m + d.d_m)
        counts["vcmu_retrieval"] = d.d_t * d.d_m + 2 * d.d_m * d.d_m
        if flags.memory_mode == "learnable":
            counts["vcmu_memory"] = d.n_m * d.d_m
    if flags.use_avfg:
        if flags.granularity == "global":
            counts["avfg"] = (d.d_m + d.d_raw) + 1
        else:
            cin = d.d_raw + d.d_m
            counts["avfg"] = 9 * cin * d.c_h + d.c_h + 9 * d.c_h + 1
    counts["projections"] = d.d_raw * d.d_dec + d.d_t * d.d_dec
    if flags.use_vcmu:
        counts["projections"] += d.d_m * d.d_dec
    counts["decoder"] = (3 * d.d_dec * d.d_dec
                         + d.d_dec * d.d_ff + d.d_ff
                         + d.d_ff * d.d_dec + d.d_dec)
    counts["head"] = d.d_dec * d.vocab
    return counts


def total_param_count(dims, flags) -> int:
    return sum(component_param_counts(dims, flags).values())


def _component_of(name: str) -> str:
    if name.startswith("vcmu."):
        leaf = name[len("vcmu."):]
        if leaf == "memory_init":
            return "vcmu_memory"
        if leaf in ("w_g", "b_g", "w_m", "b_m"):
            return "vcmu_gate"
        if leaf in ("w_q", "w_k", "w_v"):
            return "vcmu_retrieval"
        return "vcmu_encoder"
    if name.startswith("avfg."):
        return "avfg"
    if name.startswith("proj_"):
        return "projections"
    if name.startswith("dec."):
        return "decoder"
    if name == "head":
        return "head"
    raise ContractError(f"unrecognized parameter block {name!r}")


def tally_param_counts(params) -> Dict[str, int]:
    """Per-component counts measured from the live trainable tensors."""
    counts = dict.fromkeys(COMPONENTS, 0)
    for name, ten in params.named_tensors():
        counts[_component_of(name)] += int(ten.data.size)
    return counts


def verify_accounting(params) -> Dict[str, int]:
    """Check formulas against tensor tallies; any gap is a hard failure."""
    formula = component_param_counts(params.dims, params.flags)
    tally = tally_param_counts(params)
    bad = [f"{k}: formula {formula[k]} != tally {tally[k]}"
           for k in COMPONENTS if formula[k] != tally[k]]
    if bad:
        raise ContractError("parameter accounting mismatch: "
                            + "; ".join(bad))
    return formula
