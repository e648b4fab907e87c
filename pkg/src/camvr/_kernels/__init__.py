"""Kernel backend selection.

The hot path of the whole stack is small dense matrix multiplies (attention,
gates, projections, and convolution via im2col all reduce to them). Two
interchangeable backends provide the same deterministic kernel:

* ``compiled`` -- Cython extension, built at install time if a compiler is
  available;
* ``fallback`` -- pure numpy, selected automatically when the extension is
  missing or when ``CAMVR_BACKEND=fallback`` is set.

Both accumulate in ascending order of the contracted index, so they agree
bit-for-bit with each other and with a scalar triple-loop oracle.
"""

import os

import numpy as np

from . import fallback as _fallback

try:
    from . import _fastmm as _compiled
except ImportError:
    _compiled = None

_BACKENDS = {"fallback": _fallback}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled


def available_backends():
    return sorted(_BACKENDS)


def _default_backend():
    forced = os.environ.get("CAMVR_BACKEND", "").strip().lower()
    if forced:
        if forced not in _BACKENDS:
            raise ImportError(
                f"CAMVR_BACKEND={forced!r} not available; "
                f"choose from {available_backends()}")
        return forced
    return "compiled" if _compiled is not None else "fallback"


_active_name = _default_backend()
_active = _BACKENDS[_active_name]


def backend_name():
    return _active_name


def set_backend(name):
    """Switch kernel backend (used by the benchmark and backend tests)."""
    global _active, _active_name
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; "
                         f"available: {available_backends()}")
    _active_name = name
    _active = _BACKENDS[name]


def matmul(a, b):
    """Deterministic a @ b for 2-D float64 arrays (ascending-k accumulation)."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return _active.matmul(a, b)
