"""Gated visual-textual context memory.

A fixed bank of N_m slot vectors is rewritten once per turn by a sigmoid
gate (convex interpolation between the old slot and a tanh candidate, both
computed from the turn summary) and read back with scaled dot-product
attention over the query tokens.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .numcore import Tensor, ops


@dataclass
class MemoryState:
    """Slot matrix M (N_m x D_m) owned by a single episode."""
    M: Tensor
    turn_index: int = 0


@dataclass
class RetrievedContext:
    C: Tensor          # N_t x D_m, one context row per query token
    attention: Tensor  # N_t x N_m row-stochastic weights


@dataclass
class VcmuParams:
    raw_proj: Tensor    # D_raw x D_v, shared by all grid cells
    enc_v: Tensor       # D_v x D_e
    enc_v_b: Tensor     # D_e
    enc_t: Tensor       # D_t x D_e
    enc_t_b: Tensor     # D_e
    enc_fuse: Tensor    # 2*D_e x D_e
    enc_fuse_b: Tensor  # D_e
    w_g: Tensor         # (D_e + D_m) x D_m
    b_g: Tensor         # D_m
    w_m: Tensor         # (D_e + D_m) x D_m
    b_m: Tensor         # D_m
    w_q: Tensor         # D_t x D_m
    w_k: Tensor         # D_m x D_m
    w_v: Tensor         # D_m x D_m
    memory_init: Optional[Tensor] = None  # N_m x D_m, learnable M_0 only

    def named_tensors(self, prefix: str = "vcmu."):
        """(name, tensor) pairs in a fixed order (checkpoint/optimizer order)."""
        fields = ["raw_proj", "enc_v", "enc_v_b", "enc_t", "enc_t_b",
                  "enc_fuse", "enc_fuse_b", "w_g", "b_g", "w_m", "b_m",
                  "w_q", "w_k", "w_v"]
        out = [(prefix + f, getattr(self, f)) for f in fields]
        if self.memory_init is not None:
            out.append((prefix + "memory_init", self.memory_init))
        return out


def init_vcmu_params(rng: np.random.Generator, *, n_m: int, d_m: int,
                     d_e: int, d_v: int, d_t: int, d_raw: int,
                     memory_init: str = "zeros") -> VcmuParams:
    """Draw fresh parameters; weights ~ N(0, 1/fan_in), biases zero."""
    def w(rows, cols):
        return Tensor(rng.standard_normal((rows, cols)) / np.sqrt(rows))

    def b(n):
        return Tensor(np.zeros(n))

    mem0 = None
    if memory_init == "learnable":
        mem0 = Tensor(rng.standard_normal((n_m, d_m)) * 0.1)
    elif memory_init != "zeros":
        raise ConfigError(f"memory_init must be zeros or learnable, "
                          f"got {memory_init!r}")
    return VcmuParams(
        raw_proj=w(d_raw, d_v),
        enc_v=w(d_v, d_e), enc_v_b=b(d_e),
        enc_t=w(d_t, d_e), enc_t_b=b(d_e),
        enc_fuse=w(2 * d_e, d_e), enc_fuse_b=b(d_e),
        w_g=w(d_e + d_m, d_m), b_g=b(d_m),
        w_m=w(d_e + d_m, d_m), b_m=b(d_m),
        w_q=w(d_t, d_m), w_k=w(d_m, d_m), w_v=w(d_m, d_m),
        memory_init=mem0,
    )


def init_memory(n_slots: int, dim: int, mode: str = "zeros",
                params: Optional[VcmuParams] = None) -> MemoryState:
    """Fresh M_0: exact zeros, or a copy of the learnable init tensor."""
    if n_slots < 1 or dim < 1:
        raise ConfigError(f"memory dims must be positive, "
                          f"got {n_slots} slots x {dim}")
    if mode == "zeros":
        return MemoryState(M=Tensor(np.zeros((n_slots, dim))), turn_index=0)
    if mode == "learnable":
        if params is None or params.memory_init is None:
            raise ConfigError("learnable memory init requires a "
                              "memory_init parameter tensor")
        if params.memory_init.shape != (n_slots, dim):
            raise ShapeError(f"memory_init shape {params.memory_init.shape} "
                             f"!= ({n_slots}, {dim})")
        # clone keeps the episode's M distinct from the parameter while
        # letting gradients reach it through the tape
        return MemoryState(M=ops.clone(params.memory_init), turn_index=0)
    raise ConfigError(f"unknown memory init mode {mode!r}")


def embed_visual(v_raw: Tensor, params: VcmuParams) -> Tensor:
    """Project flattened grid cells D_raw -> D_v with the shared linear map."""
    if v_raw.ndim == 3:
        h, w, c = v_raw.shape
        v_raw = ops.reshape(v_raw, (h * w, c))
    return ops.matmul(v_raw, params.raw_proj)


def encode_context(V: Tensor, T: Tensor, params: VcmuParams) -> Tensor:
    """Summarize a turn as one 1 x D_e row.

    Each modality is mean-pooled, mapped to D_e with a tanh branch, and the
    two branch outputs are fused by a final linear map.
    """
    v_branch = ops.tanh(ops.add_rowvec(
        ops.matmul(ops.mean_rows(V), params.enc_v), params.enc_v_b))
    t_branch = ops.tanh(ops.add_rowvec(
        ops.matmul(ops.mean_rows(T), params.enc_t), params.enc_t_b))
    fused = ops.concat([v_branch, t_branch], axis=1)
    return ops.add_rowvec(ops.matmul(fused, params.enc_fuse),
                          params.enc_fuse_b)


def gated_update(E: Tensor, M_prev: Tensor, params: VcmuParams) -> Tensor:
    """M_next = (1 - g) * M_prev + g * candidate, per slot and channel.

    The turn summary E (1 x D_e) is broadcast to every slot and concatenated
    with that slot's current row to drive both the gate and the candidate.
    """
    if E.ndim != 2 or E.shape[0] != 1:
        raise ShapeError(f"gated_update: E must be 1 x D_e, got {E.shape}")
    n_m = M_prev.shape[0]
    z = ops.concat([ops.broadcast_rows(E, n_m), M_prev], axis=1)
    g = ops.sigmoid(ops.add_rowvec(ops.matmul(z, params.w_g), params.b_g))
    cand = ops.tanh(ops.add_rowvec(ops.matmul(z, params.w_m), params.b_m))
    one = Tensor(np.ones(g.shape))
    return ops.add(ops.mul(ops.sub(one, g), M_prev), ops.mul(g, cand))


def retrieve(T: Tensor, M: Tensor, params: VcmuParams) -> RetrievedContext:
    """Scaled dot-product read: each query token attends over all slots."""
    q = ops.matmul(T, params.w_q)
    k = ops.matmul(M, params.w_k)
    v = ops.matmul(M, params.w_v)
    d_m = params.w_q.shape[1]
    scores = ops.scale(ops.matmul(q, ops.transpose(k)), 1.0 / np.sqrt(d_m))
    alpha = ops.softmax_rows(scores)
    return RetrievedContext(C=ops.matmul(alpha, v), attention=alpha)
