"""Gated visual-textual context memory stack on a minimal autodiff core."""

from ._kernels import available_backends, backend_name
from .checkpoint import load_model, save_model
from .integrator import (ModelDims, ModelFlags, forward_turn, init_model,
                         run_episode, train)
from .taskgen import GenConfig, gen_episode, make_splits

__version__ = "0.1.0"
__all__ = [
    "ModelDims", "ModelFlags", "init_model", "forward_turn", "train",
    "run_episode", "save_model", "load_model",
    "GenConfig", "gen_episode", "make_splits",
    "backend_name", "available_backends", "__version__",
]
