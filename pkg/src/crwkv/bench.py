"""Scaling benchmarks: BiWKV scan vs. reference, and full-model forward.

Timing is the median of ``repeats`` monotonic wall-clock runs after three
warmups. Peak memory comes from one separate ``tracemalloc`` run, which sees
every numpy allocation.
"""

from __future__ import annotations

import csv
import statistics
import time
import tracemalloc
from pathlib import Path

import numpy as np

from . import wkv
from .model import CRWKV, ModelConfig

WARMUP = 3
HEADER = ("size", "wall_ms", "peak_bytes", "variant")
DEFAULT_BUDGET = 2 * 1024**3


def median_ms(fn, repeats, warmup=WARMUP):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def peak_bytes(fn):
    tracemalloc.start()
    try:
        fn()
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return peak


def loglog_slope(sizes, values):
    """Least-squares slope of log(value) against log(size)."""
    return float(np.polyfit(np.log(sizes), np.log(values), 1)[0])


def _wkv_estimate(T, channels, variant):
    if variant == "reference":
        return 4 * 8 * T * T
    return 12 * 8 * T * channels


def bench_wkv(sizes, repeats=3, channels=8, variants=("scan", "reference"), seed=0, memory_budget=DEFAULT_BUDGET):
    """Rows ``(T, wall_ms, peak_bytes, variant)`` for each sequence length and variant."""
    rows = []
    if repeats <= 0:
        return rows
    fns = {"scan": wkv.biwkv_scan, "reference": wkv.biwkv_reference}
    rng = np.random.default_rng(seed)
    w = np.linspace(-1, 1, channels)
    u = np.full(channels, 0.5)
    for variant in variants:
        for T in sizes:
            if _wkv_estimate(T, channels, variant) > memory_budget:
                rows.append((T, "OOM", "", variant))
                continue
            k = rng.standard_normal((1, T, channels))
            v = rng.standard_normal((1, T, channels))
            call = lambda: fns[variant](k, v, w, u)
            try:
                ms = median_ms(call, repeats)
                peak = peak_bytes(call)
            except MemoryError:
                rows.append((T, "OOM", "", variant))
                continue
            rows.append((T, ms, peak, variant))
    return rows


def bench_model(sizes, repeats=3, config=None, seed=0, memory_budget=DEFAULT_BUDGET):
    """Rows ``(side, wall_ms, peak_bytes, "model")`` for square ``side x side`` inputs."""
    rows = []
    if repeats <= 0:
        return rows
    config = config or ModelConfig(base_channels=8, stage_depths=(1, 1, 1, 1))
    rng = np.random.default_rng(seed)
    for side in sizes:
        # activations plus backward caches, ~60 maps of width 4*C0 at full resolution
        if side * side * config.base_channels * 4 * 240 > memory_budget:
            rows.append((side, "OOM", "", "model"))
            continue
        x = rng.random((1, config.in_channels, side, side)).astype(np.float32)
        try:
            model = CRWKV(config, seed=seed)
            ms = median_ms(lambda: model(x), repeats)
            fresh = CRWKV(config, seed=seed)
            peak = peak_bytes(lambda: fresh(x))
        except MemoryError:
            rows.append((side, "OOM", "", "model"))
            continue
        rows.append((side, ms, peak, "model"))
    return rows


def slopes(rows, key="wall_ms", size_power=1):
    """Log-log slope per variant over rows that completed; sizes raised to ``size_power``."""
    out = {}
    for variant in sorted({r[3] for r in rows}):
        ok = [r for r in rows if r[3] == variant and r[1] != "OOM"]
        if len(ok) < 2:
            continue
        idx = HEADER.index(key)
        out[variant] = loglog_slope([r[0] ** size_power for r in ok], [r[idx] for r in ok])
    return out


def write_rows(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(HEADER)
        for size, ms, peak, variant in rows:
            w.writerow([size, ms if isinstance(ms, str) else f"{ms:.4f}", peak, variant])
