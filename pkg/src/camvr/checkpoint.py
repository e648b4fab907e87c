"""Binary checkpoint: header + named float64 parameter blocks.

Layout (all integers little-endian u32 unless noted):
  magic "CAMVR1" (6 bytes)
  12 dims: N_m D_m D_e D_v D_t D_raw D_dec C_h vocab token_vocab grid_h grid_w
  4 flag bytes: use_vcmu, use_avfg, granularity code, memory mode code
  block count, then per block:
    name length, name (utf-8), rank, extents..., row-major float64 data

Save -> load -> save must reproduce identical bytes.
"""

import struct

import numpy as np

from .avfg import GRANULARITIES
from .errors import ContractError
from .integrator import ModelDims, ModelFlags, ModelParams, init_model

MAGIC = b"CAMVR1"
_MEMORY_MODES = ("zeros", "learnable")


def save_model(path, params: ModelParams) -> None:
    d, f = params.dims, params.flags
    blocks = params.named_tensors()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack(
            "<12I", d.n_m, d.d_m, d.d_e, d.d_v, d.d_t, d.d_raw, d.d_dec,
            d.c_h, d.vocab, d.token_vocab, d.grid[0], d.grid[1]))
        fh.write(struct.pack(
            "<4B", int(f.use_vcmu), int(f.use_avfg),
            GRANULARITIES.index(f.granularity),
            _MEMORY_MODES.index(f.memory_mode)))
        fh.write(struct.pack("<I", len(blocks)))
        for name, tensor in blocks:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            shape = tensor.shape
            fh.write(struct.pack("<I", len(shape)))
            for extent in shape:
                fh.write(struct.pack("<I", extent))
            fh.write(np.ascontiguousarray(
                tensor.data, dtype="<f8").tobytes())


def _read(fh, fmt):
    size = struct.calcsize(fmt)
    buf = fh.read(size)
    if len(buf) != size:
        raise ContractError("checkpoint truncated")
    return struct.unpack(fmt, buf)


def load_model(path) -> ModelParams:
    """Rebuild a model whose active tensors are bit-equal to the saved ones."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ContractError(f"{path}: not a model checkpoint")
        (n_m, d_m, d_e, d_v, d_t, d_raw, d_dec, c_h, vocab, token_vocab,
         grid_h, grid_w) = _read(fh, "<12I")
        use_vcmu, use_avfg, gran_code, mem_code = _read(fh, "<4B")
        dims = ModelDims(n_m=n_m, d_m=d_m, d_e=d_e, d_v=d_v, d_t=d_t,
                         d_raw=d_raw, d_dec=d_dec, c_h=c_h, vocab=vocab,
                         token_vocab=token_vocab, grid=(grid_h, grid_w))
        flags = ModelFlags(use_vcmu=bool(use_vcmu), use_avfg=bool(use_avfg),
                           granularity=GRANULARITIES[gran_code],
                           memory_mode=_MEMORY_MODES[mem_code])
        params = init_model(dims, flags, seed=0)
        targets = dict(params.named_tensors())
        (n_blocks,) = _read(fh, "<I")
        seen = set()
        for _ in range(n_blocks):
            (name_len,) = _read(fh, "<I")
            name = fh.read(name_len).decode("utf-8")
            (rank,) = _read(fh, "<I")
            shape = tuple(_read(fh, f"<{rank}I")) if rank else ()
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            data = np.frombuffer(fh.read(count * 8), dtype="<f8")
            if data.size != count:
                raise ContractError("checkpoint truncated")
            if name not in targets:
                raise ContractError(f"unknown parameter block {name!r}")
            if targets[name].shape != shape:
                raise ContractError(
                    f"block {name!r} shape {shape} != expected "
                    f"{targets[name].shape}")
            targets[name].data[...] = data.reshape(shape)
            seen.add(name)
        missing = set(targets) - seen
        if missing:
            raise ContractError(f"checkpoint missing blocks: "
                                f"{sorted(missing)}")
    return params
