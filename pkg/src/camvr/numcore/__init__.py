"""Minimal deterministic numeric core: tensors, ops, reverse-mode gradients."""

from .gradcheck import gradcheck, gradcheck_report
from .tape import GradTape, active_tape
from .tensor import Tensor, ones, zeros

__all__ = [
    "Tensor", "zeros", "ones",
    "GradTape", "active_tape",
    "gradcheck", "gradcheck_report",
]
