"""Parameter accounting: closed-form formulas vs live tensor tallies."""

import pytest

from camvr import accounting
from camvr.errors import ContractError
from camvr.integrator import ModelDims, ModelFlags, init_model

DEFAULT = ModelDims()


def test_gate_block_reference_value():
    counts = accounting.component_param_counts(DEFAULT, ModelFlags())
    assert counts["vcmu_gate"] == 2 * ((32 + 32) * 32 + 32) == 4160


def test_retrieval_block_reference_value():
    counts = accounting.component_param_counts(DEFAULT, ModelFlags())
    assert counts["vcmu_retrieval"] == 32 * 32 + 2 * 32 * 32 == 3072


def test_base_variant_mechanism_rows_zero():
    flags = ModelFlags(use_vcmu=False, use_avfg=False)
    counts = accounting.component_param_counts(DEFAULT, flags)
    assert counts["vcmu_encoder"] == 0
    assert counts["vcmu_gate"] == 0
    assert counts["vcmu_retrieval"] == 0
    assert counts["vcmu_memory"] == 0
    assert counts["avfg"] == 0
    assert counts["decoder"] > 0 and counts["head"] > 0


ALL_FLAGS = [
    ModelFlags(),
    ModelFlags(use_vcmu=False),
    ModelFlags(use_avfg=False),
    ModelFlags(use_vcmu=False, use_avfg=False),
    ModelFlags(granularity="global"),
    ModelFlags(granularity="coarse"),
    ModelFlags(memory_mode="learnable"),
]


@pytest.mark.parametrize("flags", ALL_FLAGS, ids=lambda f: (
    f"vcmu{int(f.use_vcmu)}-avfg{int(f.use_avfg)}-"
    f"{f.granularity}-{f.memory_mode}"))
def test_formula_equals_tally_all_variants(flags):
    params = init_model(DEFAULT, flags, seed=0)
    assert accounting.verify_accounting(params) == \
        accounting.tally_param_counts(params)


@pytest.mark.parametrize("n_m", [4, 8, 16, 32])
def test_formula_equals_tally_swept_slots(n_m):
    dims = ModelDims(n_m=n_m)
    for mode in ("zeros", "learnable"):
        params = init_model(dims, ModelFlags(memory_mode=mode), seed=1)
        accounting.verify_accounting(params)


def test_learnable_memory_grows_with_slots():
    zeros = [accounting.total_param_count(ModelDims(n_m=n), ModelFlags())
             for n in (4, 8, 16, 32)]
    learn = [accounting.total_param_count(
        ModelDims(n_m=n), ModelFlags(memory_mode="learnable"))
        for n in (4, 8, 16, 32)]
    assert len(set(zeros)) == 1
    assert learn == sorted(learn) and len(set(learn)) == 4


def test_odd_dims_still_balance():
    dims = ModelDims(n_m=3, d_m=5, d_e=7, d_v=4, d_t=6, d_raw=8,
                     d_dec=10, c_h=2, vocab=11, token_vocab=9, grid=(4, 4))
    for flags in ALL_FLAGS:
        accounting.verify_accounting(init_model(dims, flags, seed=2))


def test_mismatch_is_hard_failure():
    params = init_model(DEFAULT, ModelFlags(), seed=0)
    import numpy as np
    from camvr.numcore.tensor import Tensor
    params.head = Tensor(np.zeros((DEFAULT.d_dec, DEFAULT.vocab + 1)))
    with pytest.raises(ContractError, match="head"):
        accounting.verify_accounting(params)


def test_unknown_block_name_rejected():
    with pytest.raises(ContractError):
        accounting._component_of("mystery.block")
