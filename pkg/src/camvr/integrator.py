"""Per-turn pipeline and training.

Each turn runs: encode the turn, rewrite the memory, retrieve context for
the query tokens, derive a spatial attention map and modulate the visual
grid, project the three streams (visual cells, query tokens, context rows)
to a common width, and decode a single answer with a small self-attention
block. Components can be disabled independently: without the memory the
context stream is dropped, without spatial attention the visual grid passes
through untouched.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import avfg as avfg_mod
from . import vcmu as vcmu_mod
from .avfg import AttentionMap, AvfgParams, GRANULARITIES
from .errors import ConfigError, ContractError, ShapeError, TrainingDiverged
from .numcore import GradTape, Tensor, ops
from .optim import Adam
from .vcmu import MemoryState, RetrievedContext, VcmuParams

# the token table stands in for a frozen pretrained text embedder; one fixed
# literal seed so every model instance shares the same table
_TOKEN_TABLE_SEED = 24217


@dataclass(frozen=True)
class ModelDims:
    n_m: int = 16
    d_m: int = 32
    d_e: int = 32
    d_v: int = 32
    d_t: int = 32
    d_raw: int = 8
    d_dec: int = 32
    c_h: int = 8
    vocab: int = 53        # closed answer vocabulary
    token_vocab: int = 23  # query token vocabulary
    grid: Tuple[int, int] = (6, 6)

    @property
    def d_ff(self) -> int:
        # decoder feed-forward width is tied to D_dec, not configured
        return 2 * self.d_dec

    def validate(self):
        for name in ("n_m", "d_m", "d_e", "d_v", "d_t", "d_raw", "d_dec",
                     "c_h", "vocab", "token_vocab"):
            if getattr(self, name) < 1:
                raise ConfigError(f"dimension {name} must be >= 1, "
                                  f"got {getattr(self, name)}")
        if self.grid[0] < 1 or self.grid[1] < 1:
            raise ConfigError(f"grid extents must be >= 1, got {self.grid}")


@dataclass
class ModelFlags:
    use_vcmu: bool = True
    use_avfg: bool = True
    granularity: str = "native"
    memory_mode: str = "zeros"

    def validate(self):
        if self.granularity not in GRANULARITIES:
            raise ConfigError(f"granularity must be one of {GRANULARITIES}, "
                              f"got {self.granularity!r}")
        if self.memory_mode not in ("zeros", "learnable"):
            raise ConfigError(f"memory_mode must be zeros or learnable, "
                              f"got {self.memory_mode!r}")


@dataclass
class DecoderParams:
    att_q: Tensor  # D_dec x D_dec
    att_k: Tensor
    att_v: Tensor
    ff1: Tensor    # D_dec x D_ff
    ff1_b: Tensor
    ff2: Tensor    # D_ff x D_dec
    ff2_b: Tensor

    def named_tensors(self, prefix: str = "dec."):
        fields = ["att_q", "att_k", "att_v", "ff1", "ff1_b", "ff2", "ff2_b"]
        return [(prefix + f, getattr(self, f)) for f in fields]


@dataclass
class ModelParams:
    dims: ModelDims
    flags: ModelFlags
    vcmu: VcmuParams
    avfg: AvfgParams
    proj_v: Tensor  # D_raw x D_dec
    proj_t: Tensor  # D_t x D_dec
    proj_c: Tensor  # D_m x D_dec
    dec: DecoderParams
    head: Tensor    # D_dec x vocab, bias-less
    # frozen constants, regenerated from dims (not trained, not checkpointed)
    token_table: np.ndarray = field(repr=False, default=None)
    pos_grid: np.ndarray = field(repr=False, default=None)

    def named_tensors(self):
        """Trainable tensors for the active configuration, fixed order.

        Disabled components are excluded entirely, so the optimizer,
        the accounting, and the checkpoint all see the same set.
        """
        out = []
        if self.flags.use_vcmu:
            out.extend(self.vcmu.named_tensors())
        if self.flags.use_avfg:
            out.extend(self.avfg.named_tensors(self.flags.granularity))
        out.append(("proj_v", self.proj_v))
        out.append(("proj_t", self.proj_t))
        if self.flags.use_vcmu:
            out.append(("proj_c", self.proj_c))
        out.extend(self.dec.named_tensors())
        out.append(("head", self.head))
        return out


def token_embedding_table(vocab: int, d_t: int) -> np.ndarray:
    rng = np.random.default_rng(_TOKEN_TABLE_SEED)
    return rng.standard_normal((vocab, d_t)) / np.sqrt(d_t)


def grid_position_constants(h: int, w: int, d: int) -> np.ndarray:
    """Sinusoidal cell-identity codes, one row per grid cell (row-major).

    Added to the projected visual rows so the decoder can tell cells apart;
    the raw channel encoding itself carries no location information.
    """
    n = h * w
    pos = np.arange(n, dtype=np.float64)[:, None]
    idx = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / d)
    table = np.zeros((n, d))
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return table


def init_model(dims: ModelDims, flags: ModelFlags,
               seed: int) -> ModelParams:
    """Fresh model; all components are initialized even when disabled so a
    later flag flip cannot hit uninitialized tensors, but disabled ones do
    not train, count, or persist."""
    dims.validate()
    flags.validate()
    rng = np.random.default_rng(seed)

    def w(rows, cols):
        return Tensor(rng.standard_normal((rows, cols)) / np.sqrt(rows))

    vc = vcmu_mod.init_vcmu_params(
        rng, n_m=dims.n_m, d_m=dims.d_m, d_e=dims.d_e, d_v=dims.d_v,
        d_t=dims.d_t, d_raw=dims.d_raw, memory_init=flags.memory_mode)
    av = avfg_mod.init_avfg_params(rng, d_raw=dims.d_raw, d_m=dims.d_m,
                                   c_h=dims.c_h)
    dec = DecoderParams(
        att_q=w(dims.d_dec, dims.d_dec),
        att_k=w(dims.d_dec, dims.d_dec),
        att_v=w(dims.d_dec, dims.d_dec),
        ff1=w(dims.d_dec, dims.d_ff), ff1_b=Tensor(np.zeros(dims.d_ff)),
        ff2=w(dims.d_ff, dims.d_dec), ff2_b=Tensor(np.zeros(dims.d_dec)),
    )
    h, wd = dims.grid
    return ModelParams(
        dims=dims, flags=flags, vcmu=vc, avfg=av,
        proj_v=w(dims.d_raw, dims.d_dec),
        proj_t=w(dims.d_t, dims.d_dec),
        proj_c=w(dims.d_m, dims.d_dec),
        dec=dec,
        head=w(dims.d_dec, dims.vocab),
        token_table=token_embedding_table(dims.token_vocab, dims.d_t),
        pos_grid=grid_position_constants(h, wd, dims.d_dec),
    )


def embed_tokens(token_ids, params: ModelParams) -> Tensor:
    ids = list(token_ids)
    if not ids:
        raise ContractError("query must contain at least one token")
    table = params.token_table
    for t in ids:
        if not 0 <= t < table.shape[0]:
            raise ContractError(f"token id {t} outside vocabulary "
                                f"[0, {table.shape[0]})")
    return Tensor(table[ids])


def project_streams(v_mod: Tensor, T: Tensor, C: Optional[Tensor],
                    params: ModelParams):
    """Linear maps onto the shared decoder width D_dec."""
    h, w, c = v_mod.shape
    v_flat = ops.reshape(v_mod, (h * w, c))
    v_pp = ops.matmul(v_flat, params.proj_v)
    t_pp = ops.matmul(T, params.proj_t)
    c_pp = None if C is None else ops.matmul(C, params.proj_c)
    return v_pp, t_pp, c_pp


def build_decoder_input(v_pp: Tensor, t_pp: Tensor,
                        c_pp: Optional[Tensor]) -> Tensor:
    streams = [v_pp, t_pp] + ([] if c_pp is None else [c_pp])
    width = streams[0].shape[1]
    for s in streams[1:]:
        if s.shape[1] != width:
            raise ShapeError(f"decoder streams must share width, "
                             f"got {[s.shape for s in streams]}")
    return ops.concat(streams, axis=0)


def decode(dec_input: Tensor, params: ModelParams, internals=None) -> Tensor:
    """Self-attention block + feed-forward (both residual), mean-pool,
    linear answer head. Returns logits of shape (vocab,)."""
    d = params.dims.d_dec
    x = dec_input
    q = ops.matmul(x, params.dec.att_q)
    k = ops.matmul(x, params.dec.att_k)
    v = ops.matmul(x, params.dec.att_v)
    alpha = ops.softmax_rows(
        ops.scale(ops.matmul(q, ops.transpose(k)), 1.0 / np.sqrt(d)))
    h = ops.add(x, ops.matmul(alpha, v))
    f = ops.tanh(ops.add_rowvec(ops.matmul(h, params.dec.ff1),
                                params.dec.ff1_b))
    h2 = ops.add(h, ops.add_rowvec(ops.matmul(f, params.dec.ff2),
                                   params.dec.ff2_b))
    pooled = ops.mean_rows(h2)
    logits = ops.reshape(ops.matmul(pooled, params.head),
                         (params.dims.vocab,))
    if internals is not None:
        internals["decoder_attention"] = alpha
    return logits


def forward_turn(turn, mem: MemoryState, params: ModelParams,
                 internals=None):
    """One dialogue turn.

    Returns (logits, next MemoryState, AttentionMap or None,
    RetrievedContext or None). With the memory disabled the state object
    passes through untouched and the context rows are an all-zero matrix,
    so the decoder input keeps its three-stream layout; with spatial
    attention disabled the visual tensor passes through untouched.
    """
    dims, flags = params.dims, params.flags
    v_raw = Tensor(np.asarray(turn.visual, dtype=np.float64))
    t_emb = embed_tokens(turn.query_tokens, params)

    retrieved = None
    new_mem = mem
    if flags.use_vcmu:
        v_emb = vcmu_mod.embed_visual(v_raw, params.vcmu)
        e = vcmu_mod.encode_context(v_emb, t_emb, params.vcmu)
        m_next = vcmu_mod.gated_update(e, mem.M, params.vcmu)
        new_mem = MemoryState(M=m_next, turn_index=mem.turn_index + 1)
        # retrieval reads the freshly updated memory, not the previous one
        retrieved = vcmu_mod.retrieve(t_emb, m_next, params.vcmu)

    amap = None
    if flags.use_avfg:
        if retrieved is not None:
            c_pooled = avfg_mod.pool_context(retrieved.C)
        else:
            c_pooled = Tensor(np.zeros((1, dims.d_m)))
        h, w = v_raw.shape[0], v_raw.shape[1]
        if flags.granularity == "global":
            s = avfg_mod.global_scalar(v_raw, c_pooled, params.avfg)
            amap = AttentionMap(A=ops.reshape(s, (1, 1, 1)), resolution=(1, 1))
        elif flags.granularity == "coarse":
            amap = avfg_mod.gen_attention_map(v_raw, c_pooled, params.avfg,
                                              (h // 2, w // 2))
        else:
            amap = avfg_mod.gen_attention_map(v_raw, c_pooled, params.avfg,
                                              (h, w))
        v_mod = avfg_mod.modulate(v_raw, amap)
    else:
        v_mod = v_raw

    if retrieved is not None:
        c_rows = retrieved.C
    else:
        # memory off: context is a zero matrix, not a missing stream
        c_rows = Tensor(np.zeros((t_emb.shape[0], dims.d_m)))
    v_pp, t_pp, c_pp = project_streams(v_mod, t_emb, c_rows, params)
    v_pp = ops.add(v_pp, Tensor(params.pos_grid))
    logits = decode(build_decoder_input(v_pp, t_pp, c_pp), params,
                    internals=internals)
    if internals is not None:
        internals["v_raw"] = v_raw
        internals["v_mod"] = v_mod
        internals["memory"] = new_mem
    return logits, new_mem, amap, retrieved


def episode_loss(params: ModelParams, episode) -> Tensor:
    """Summed per-turn cross-entropy, memory threaded through all turns."""
    mem = vcmu_mod.init_memory(params.dims.n_m, params.dims.d_m,
                               params.flags.memory_mode, params.vcmu)
    total = None
    for turn in episode.turns:
        logits, mem, _, _ = forward_turn(turn, mem, params)
        turn_loss = ops.cross_entropy(logits, turn.target_answer_id)
        total = turn_loss if total is None else ops.add(total, turn_loss)
    return total


def train(episodes, params: ModelParams, *, steps: int, lr: float = 1e-3,
          batch_size: int = 8, seed: int = 0) -> List[float]:
    """Minibatch training with backprop through the full turn recurrence.

    Returns the per-step loss curve (batch mean of episode losses).
    """
    if not episodes:
        raise ContractError("train: empty episode list")
    named = dict(params.named_tensors())
    opt = Adam(named, lr=lr)
    rng = np.random.default_rng(seed)
    curve = []
    for step in range(steps):
        idx = rng.integers(0, len(episodes), size=batch_size)
        with GradTape() as tape:
            total = None
            for i in idx:
                ep_loss = episode_loss(params, episodes[int(i)])
                total = ep_loss if total is None else ops.add(total, ep_loss)
            loss = ops.scale(total, 1.0 / batch_size)
        val = loss.item()
        if not np.isfinite(val):
            raise TrainingDiverged(
                f"loss became {val} at step {step}; "
                f"reduce the learning rate or inspect the data")
        grads = tape.gradients(loss, named)
        opt.step(grads)
        curve.append(val)
    return curve


def predict(logits: Tensor) -> int:
    """Argmax answer id; ties resolve to the lowest index."""
    return int(np.argmax(logits.data))


def run_episode(params: ModelParams, episode, internals_per_turn=None):
    """Evaluate one episode without recording gradients.

    Returns one record per turn: dict with turn (1-based), depth, target,
    prediction, and correctness. When ``internals_per_turn`` is a list,
    a per-turn internals dict is appended to it (ablation audits and
    attention-map export use this).
    """
    mem = vcmu_mod.init_memory(params.dims.n_m, params.dims.d_m,
                               params.flags.memory_mode, params.vcmu)
    records = []
    for pos, turn in enumerate(episode.turns, start=1):
        if mem.turn_index != pos - 1:
            raise ContractError(f"memory at turn index {mem.turn_index}, "
                                f"expected {pos - 1}")
        internals = {} if internals_per_turn is not None else None
        logits, mem, amap, retrieved = forward_turn(turn, mem, params,
                                                    internals=internals)
        if internals is not None:
            internals["attention_map"] = amap
            internals["retrieved"] = retrieved
            internals_per_turn.append(internals)
        pred = predict(logits)
        records.append({
            "turn": pos,
            "depth": turn.dependency_depth,
            "target": turn.target_answer_id,
            "prediction": pred,
            "correct": pred == turn.target_answer_id,
        })
        if not params.flags.use_vcmu:
            # memory must stay untouched; keep the index contract anyway
            mem = MemoryState(M=mem.M, turn_index=pos)
    return records
