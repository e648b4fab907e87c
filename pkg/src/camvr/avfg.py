"""Context-driven spatial attention over the visual grid.

Retrieved context is pooled to one row, broadcast across the grid,
concatenated channelwise with the (possibly downsampled) visual features,
and pushed through a small two-layer conv net ending in a sigmoid. The
resulting map in (0,1) rescales every cell of the visual grid. A global
variant collapses the map to a single scalar weight.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .numcore import Tensor, ops

GRANULARITIES = ("global", "coarse", "native")


@dataclass
class AttentionMap:
    A: Tensor                    # H' x W' x 1, entries strictly in (0,1)
    resolution: Tuple[int, int]


@dataclass
class AvfgParams:
    conv1: Tensor     # 3 x 3 x (D_raw + D_m) x C_h
    conv1_b: Tensor   # C_h
    conv2: Tensor     # 3 x 3 x C_h x 1
    conv2_b: Tensor   # 1
    global_w: Tensor  # (D_m + D_raw) x 1, scalar-weight variant only
    global_b: Tensor  # 1

    def named_tensors(self, granularity: str, prefix: str = "avfg."):
        """Tensors actually used by the given granularity, fixed order."""
        if granularity == "global":
            fields = ["global_w", "global_b"]
        else:
            fields = ["conv1", "conv1_b", "conv2", "conv2_b"]
        return [(prefix + f, getattr(self, f)) for f in fields]


def init_avfg_params(rng: np.random.Generator, *, d_raw: int, d_m: int,
                     c_h: int) -> AvfgParams:
    if c_h < 1:
        raise ConfigError(f"conv channel count must be >= 1, got {c_h}")
    cin = d_raw + d_m
    return AvfgParams(
        conv1=Tensor(rng.standard_normal((3, 3, cin, c_h)) / np.sqrt(9 * cin)),
        conv1_b=Tensor(np.zeros(c_h)),
        conv2=Tensor(rng.standard_normal((3, 3, c_h, 1)) / np.sqrt(9 * c_h)),
        conv2_b=Tensor(np.zeros(1)),
        global_w=Tensor(rng.standard_normal((d_m + d_raw, 1))
                        / np.sqrt(d_m + d_raw)),
        global_b=Tensor(np.zeros(1)),
    )


def pool_context(C: Tensor) -> Tensor:
    """Mean over context rows -> 1 x D_m."""
    if C.ndim != 2 or C.shape[0] < 1:
        raise ContractError(f"pool_context: need at least one row, "
                            f"got shape {C.shape}")
    return ops.mean_rows(C)


def gen_attention_map(v_raw: Tensor, c_pooled: Tensor, params: AvfgParams,
                      resolution: Tuple[int, int]) -> AttentionMap:
    """Conv net over [visual channels ; broadcast context] -> map in (0,1).

    Supported resolutions: the grid itself, or exactly half of it (the
    visual features are then 2x2 average-pooled first).
    """
    h, w = v_raw.shape[0], v_raw.shape[1]
    res = tuple(resolution)
    if res == (h, w):
        base = v_raw
    elif res == (h // 2, w // 2) and h % 2 == 0 and w % 2 == 0:
        base = ops.avg_pool2x2(v_raw)
    else:
        raise ConfigError(f"unsupported attention resolution {res} "
                          f"for a {h}x{w} grid")
    ctx = ops.broadcast_grid(c_pooled, res[0], res[1])
    x = ops.concat([base, ctx], axis=2)
    hidden = ops.tanh(ops.add_chanvec(ops.conv2d(x, params.conv1),
                                      params.conv1_b))
    a = ops.sigmoid(ops.add_chanvec(ops.conv2d(hidden, params.conv2),
                                    params.conv2_b))
    return AttentionMap(A=a, resolution=res)


def modulate(v_raw: Tensor, amap: AttentionMap) -> Tensor:
    """Per-cell rescale of the visual grid by the attention map.

    Coarser maps are nearest-neighbor upsampled first, which keeps every
    entry inside (0,1).
    """
    h, w = v_raw.shape[0], v_raw.shape[1]
    a = amap.A
    if amap.resolution != (h, w):
        rh, rw = amap.resolution
        if h % rh or w % rw:
            raise ShapeError(f"attention map {amap.resolution} does not "
                             f"divide grid {(h, w)}")
        a = ops.upsample_nearest(a, (h, w))
    return ops.mul_spatial(v_raw, a)


def global_scalar(v_raw: Tensor, c_pooled: Tensor,
                  params: AvfgParams) -> Tensor:
    """Single weight in (0,1) from pooled context and mean visual features."""
    h, w, c = v_raw.shape
    v_mean = ops.mean_rows(ops.reshape(v_raw, (h * w, c)))
    feat = ops.concat([c_pooled, v_mean], axis=1)
    return ops.sigmoid(ops.add_rowvec(ops.matmul(feat, params.global_w),
                                      params.global_b))


def global_weighting(v_raw: Tensor, c_pooled: Tensor,
                     params: AvfgParams) -> Tensor:
    """Whole-image variant: V_mod = s * V_raw for one scalar s."""
    s = global_scalar(v_raw, c_pooled, params)
    h, w = v_raw.shape[0], v_raw.shape[1]
    return ops.mul_spatial(v_raw, ops.broadcast_grid(s, h, w))
