"""Micro-benchmarks: conv-vs-linear patch embedding and kernel backends.

Timings use median-of-repeats wall clock. Each benchmark asserts numerical
agreement before timing, so a reported speedup can never come from the two
paths computing different things.
"""

from __future__ import annotations

import time

import numpy as np

from oelab.backend import BACKEND_NAME, available_backends
from oelab.tokens.conv_equiv import (
    conv_patch_embed,
    conv_weight_to_linear,
    linear_patch_embed,
)


def _median_time(fn, repeats: int, warmup: int = 1) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return float(np.median(samples))


def bench_patch_embed(
    height: int = 32,
    width: int = 32,
    timesteps: int = 4,
    channels: int = 12,
    patch: int = 8,
    dim: int = 128,
    repeats: int = 20,
    seed: int = 0,
) -> dict:
    """Time the direct stride-P conv against reshape+matmul on one image."""
    rng = np.random.default_rng(seed)
    image = rng.standard_normal((timesteps, height, width, channels)).astype(np.float32)
    weight = rng.standard_normal((patch, patch, channels, dim)).astype(np.float32) * 0.02
    bias = rng.standard_normal(dim).astype(np.float32) * 0.02
    weight2d = conv_weight_to_linear(weight)

    conv_out = conv_patch_embed(image, weight, bias)
    linear_out = linear_patch_embed(image, weight2d, bias, patch)
    max_diff = float(np.abs(conv_out - linear_out).max())
    if max_diff > 1e-5:
        raise AssertionError(f"paths disagree before timing: max diff {max_diff}")

    t_conv = _median_time(lambda: conv_patch_embed(image, weight, bias), repeats)
    t_linear = _median_time(
        lambda: linear_patch_embed(image, weight2d, bias, patch), repeats
    )
    return {
        "max_diff": max_diff,
        "conv_ms": t_conv * 1e3,
        "linear_ms": t_linear * 1e3,
        "speedup_linear_over_conv": t_conv / t_linear,
    }


def _kernel_workload(mod, rows: int, cols: int, rng: np.random.Generator) -> None:
    x = rng.standard_normal((rows, cols)).astype(np.float32)
    g = np.ones(cols, dtype=np.float32)
    b = np.zeros(cols, dtype=np.float32)
    mod.layer_norm_forward(x, g, b, 1e-5)
    mod.softmax_forward(x)
    mod.logsumexp_forward(x)
    mod.gelu_forward(x.reshape(-1))
    mod.relu_forward(x.reshape(-1))


def bench_kernels(
    rows: int = 256, cols: int = 256, repeats: int = 30, seed: int = 0
) -> dict:
    """Median time per backend for a fixed fused-kernel workload."""
    results: dict = {"rows": rows, "cols": cols, "backends": {}}
    for name, mod in available_backends().items():
        rng = np.random.default_rng(seed)
        t = _median_time(lambda: _kernel_workload(mod, rows, cols, rng), repeats)
        results["backends"][name] = {
            "median_ms": t * 1e3,
            "compiled": bool(mod.IS_COMPILED),
        }
    if {"pure", "compiled"} <= results["backends"].keys():
        results["speedup_compiled_over_pure"] = (
            results["backends"]["pure"]["median_ms"]
            / results["backends"]["compiled"]["median_ms"]
        )
    results["active_backend"] = BACKEND_NAME
    return results
