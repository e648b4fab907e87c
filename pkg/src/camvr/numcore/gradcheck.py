"""Finite-difference verification of tape gradients."""

import numpy as np

from .tape import GradTape


def gradcheck(f, params, eps=1e-5):
    """Max relative error between tape gradients and central differences.

    ``f`` is a zero-argument callable returning a scalar Tensor computed from
    the tensors in ``params`` (name -> Tensor); it must be deterministic.
    Each parameter entry is perturbed in place by +/- eps for the central
    difference (f(p+eps) - f(p-eps)) / (2 eps). The relative error uses
    denominator max(|analytic|, |numeric|, 1e-6); the floor keeps the
    difference quotient's cancellation noise (about 1e-11 at unit loss
    scale) from registering on near-zero gradient entries, while genuine
    derivative bugs still surface at O(0.1) relative error.
    """
    with GradTape() as tape:
        loss = f()
    analytic = tape.gradients(loss, params)

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f().item()
            flat[i] = orig - eps
            down = f().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            denom = max(abs(a_flat[i]), abs(numeric), 1e-6)
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
    return worst


def gradcheck_report(blocks, eps=1e-5):
    """Run gradcheck over named (f, params) blocks; returns name -> error."""
    out = {}
    for name, (f, params) in blocks.items():
        out[name] = gradcheck(f, params, eps=eps)
    return out
