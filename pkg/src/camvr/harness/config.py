"""Flat key=value experiment configuration with CLI overrides.

Every field is validated before any compute; a bad entry is rejected with
the offending key named in the error message.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Tuple

from .. import taskgen
from ..avfg import GRANULARITIES
from ..errors import ConfigError
from ..integrator import ModelDims, ModelFlags


@dataclass
class ExperimentConfig:
    # model dimensions
    n_m: int = 16
    d_m: int = 32
    d_e: int = 32
    d_v: int = 32
    d_t: int = 32
    d_raw: int = 8
    d_dec: int = 32
    c_h: int = 8
    # variant flags
    use_vcmu: bool = True
    use_avfg: bool = True
    granularity: str = "native"
    memory_init: str = "zeros"
    # training
    steps: int = 2000
    lr: float = 1e-3
    batch_size: int = 8
    seeds: Tuple[int, ...] = (0, 1, 2)
    # data
    train_episodes: int = 150
    eval_episodes: int = 100
    turns: int = 6
    grid_h: int = 6
    grid_w: int = 6
    data_seed: int = 42
    # output
    out_dir: str = "runs/out"

    def validate(self) -> "ExperimentConfig":
        for key in ("n_m", "d_m", "d_e", "d_v", "d_t", "d_dec", "c_h",
                    "steps", "batch_size", "train_episodes",
                    "eval_episodes", "data_seed"):
            v = getattr(self, key)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ConfigError(f"{key} must be a nonnegative integer, "
                                  f"got {v!r}")
        for key in ("n_m", "d_m", "d_e", "d_v", "d_t", "d_dec", "c_h",
                    "batch_size", "train_episodes", "eval_episodes"):
            if getattr(self, key) == 0:
                raise ConfigError(f"{key} must be positive")
        if self.d_raw != taskgen.D_RAW:
            raise ConfigError(f"d_raw must equal the task channel count "
                              f"{taskgen.D_RAW}, got {self.d_raw}")
        if not isinstance(self.lr, float) or not 0 < self.lr < 1:
            raise ConfigError(f"lr must be a float in (0,1), got {self.lr!r}")
        if self.granularity not in GRANULARITIES:
            raise ConfigError(f"granularity must be one of {GRANULARITIES}, "
                              f"got {self.granularity!r}")
        if self.memory_init not in ("zeros", "learnable"):
            raise ConfigError(f"memory_init must be zeros or learnable, "
                              f"got {self.memory_init!r}")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be nonempty and distinct, "
                              f"got {self.seeds!r}")
        if self.turns < 2:
            raise ConfigError(f"turns must be >= 2, got {self.turns}")
        if self.grid_h < 4 or self.grid_w < 4:
            raise ConfigError(f"grid must be at least 4x4, got "
                              f"{self.grid_h}x{self.grid_w}")
        if not self.out_dir:
            raise ConfigError("out_dir must be a nonempty path")
        return self

    # -- derived views -----------------------------------------------------
    def model_dims(self, n_m=None) -> ModelDims:
        grid = (self.grid_h, self.grid_w)
        return ModelDims(
            n_m=self.n_m if n_m is None else n_m,
            d_m=self.d_m, d_e=self.d_e, d_v=self.d_v, d_t=self.d_t,
            d_raw=self.d_raw, d_dec=self.d_dec, c_h=self.c_h,
            vocab=len(taskgen.answer_vocab(grid)),
            token_vocab=taskgen.TOKEN_VOCAB, grid=grid)

    def model_flags(self) -> ModelFlags:
        return ModelFlags(use_vcmu=self.use_vcmu, use_avfg=self.use_avfg,
                          granularity=self.granularity,
                          memory_mode=self.memory_init)

    def gen_config(self) -> taskgen.GenConfig:
        return taskgen.GenConfig(grid=(self.grid_h, self.grid_w),
                                 turns=self.turns)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _parse_value(key: str, raw: str):
    f = _FIELDS[key]
    raw = raw.strip()
    try:
        if f.type == "bool" or isinstance(f.default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if key == "seeds":
            return tuple(int(s) for s in raw.split(",") if s.strip())
        if isinstance(f.default, int):
            return int(raw)
        if isinstance(f.default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for config key {key!r}: {raw!r}")


def apply_overrides(config: ExperimentConfig, overrides) -> ExperimentConfig:
    """Return a copy with string overrides applied; keys are checked."""
    updates = {}
    for key, raw in overrides.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        updates[key] = raw if not isinstance(raw, str) \
            else _parse_value(key, raw)
    return dataclasses.replace(config, **updates)


def load_config(path) -> ExperimentConfig:
    """Parse a flat `key = value` file; '#' starts a comment."""
    overrides = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, "
                                  f"got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in _FIELDS:
                raise ConfigError(f"{path}:{lineno}: unknown config "
                                  f"key {key!r}")
            overrides[key] = _parse_value(key, raw)
    return apply_overrides(ExperimentConfig(), overrides)
