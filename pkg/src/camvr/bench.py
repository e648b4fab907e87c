"""Backend micro-benchmark: ``python -m camvr.bench``.

Compares the compiled matmul kernel with the numpy fallback on raw
multiplies and on a full model forward/training step, and verifies on the
way that both produce bit-identical results.
"""

from __future__ import annotations

import time

import numpy as np

from . import _kernels, taskgen
from .integrator import (ModelDims, ModelFlags, episode_loss, forward_turn,
                         init_model)
from .numcore.tape import GradTape
from .vcmu import init_memory


def _best_of(fn, repeats: int = 5) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _bench_matmul(backend: str, rng) -> None:
    _kernels.set_backend(backend)
    for n in (32, 64, 128, 256):
        a = rng.standard_normal((n, n))
        b = rng.standard_normal((n, n))
        dt = _best_of(lambda: _kernels.matmul(a, b))
        flops = 2 * n ** 3
        print(f"  matmul {n:4d}x{n:<4d}  {dt * 1e3:8.3f} ms  "
              f"{flops / dt / 1e9:6.2f} GFLOP/s")


def _bench_model(backend: str) -> None:
    _kernels.set_backend(backend)
    dims, flags = ModelDims(), ModelFlags()
    params = init_model(dims, flags, seed=0)
    episode = taskgen.gen_episode(taskgen.GenConfig(), seed=0)

    def forward():
        mem = init_memory(dims.n_m, dims.d_m, flags.memory_mode,
                          params.vcmu)
        for turn in episode.turns:
            _, mem, _, _ = forward_turn(turn, mem, params)

    def train_step():
        with GradTape() as tape:
            loss = episode_loss(params, episode)
        tape.gradients(loss, dict(params.named_tensors()))

    forward()  # warm caches before timing
    print(f"  forward episode ({len(episode.turns)} turns): "
          f"{_best_of(forward) * 1e3:8.3f} ms")
    print(f"  train step (fwd+bwd, 1 episode):   "
          f"{_best_of(train_step) * 1e3:8.3f} ms")


def _verify_agreement(rng) -> None:
    backends = _kernels.available_backends()
    if len(backends) < 2:
        return
    a = rng.standard_normal((96, 64))
    b = rng.standard_normal((64, 80))
    results = []
    for name in backends:
        _kernels.set_backend(name)
        results.append(_kernels.matmul(a, b))
    if not all(np.array_equal(results[0], r) for r in results[1:]):
        raise AssertionError("backends disagree bitwise")
    print("backend agreement: bit-identical matmul across "
          + ", ".join(backends))


def main() -> None:
    rng = np.random.default_rng(0)
    initial = _kernels.backend_name()
    print(f"available backends: {', '.join(_kernels.available_backends())}")
    try:
        _verify_agreement(rng)
        for name in _kernels.available_backends():
            print(f"backend: {name}")
            _bench_matmul(name, np.random.default_rng(1))
            _bench_model(name)
    finally:
        _kernels.set_backend(initial)


if __name__ == "__main__":
    main()
