"""Operator micro-benchmark: gating-unit forward time and parameter footprint."""

from __future__ import annotations

import csv
import os
import time
import tracemalloc
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .accounting import count_unit_params
from .rpe import lazy_mix
from .tensor import Tensor, no_grad
from .units import GatingUnit, GatingUnitSpec

MIN_REPS = 10
BYTES = 8


@dataclass
class BenchResult:
    kind: str
    window: tuple[int, int, int]
    tokens: int
    ns_median: float
    param_bytes: int  # relation parameters (dictionary, or dense weight + token bias)
    stored_bytes: int  # everything the unit stores, gating offsets included
    peak_bytes: int
    reps: int


def _relation_bytes(unit: GatingUnit) -> int:
    if unit.spec.positional:
        return unit.rpe.table.data.nbytes
    return unit.weight.data.nbytes + unit.bias.data.nbytes


def mad_filter(samples: Sequence[float], k: float = 5.0) -> np.ndarray:
    """Drop samples further than k median-absolute-deviations from the median."""
    x = np.asarray(samples, dtype=np.float64)
    med = np.median(x)
    mad = np.median(np.abs(x - med))
    if mad == 0:
        return x
    return x[np.abs(x - med) <= k * mad]


@contextmanager
def _pinned_core():
    """Run on a single logical core where the platform allows; restores the old mask."""
    old = None
    if hasattr(os, "sched_setaffinity"):
        try:
            old = os.sched_getaffinity(0)
            os.sched_setaffinity(0, {min(old)})
        except OSError:
            old = None
    try:
        yield
    finally:
        if old is not None:
            os.sched_setaffinity(0, old)


def bench_operator(kind: str, window: tuple[int, int, int], channels: int = 64, groups: int = 8,
                   reps: int = 30, warmup: int = 3, max_bytes: int = 1 << 30, lazy: bool = False) -> BenchResult:
    """Time the forward pass of one gating unit on a single window.

    ``channels`` is the unit's input width (split into two halves).  ``lazy``
    swaps the dense relation-matrix product for ``rpe.lazy_mix`` (positional
    kinds only).
    """
    if reps < MIN_REPS:
        raise ValueError(f"reps must be >= {MIN_REPS}")
    spec = GatingUnitSpec(kind, tuple(window), groups, channels)
    n = spec.tokens
    rel = n * n * (groups if spec.positional and not lazy else 1) * BYTES
    if rel > max_bytes:
        raise MemoryError(f"{kind} window {window} needs {rel} bytes for its relation matrix (cap {max_bytes})")
    unit = GatingUnit(spec, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).standard_normal((1,) + tuple(window) + (channels,)))
    if lazy:
        if not spec.positional:
            raise ValueError("lazy lookup applies to positional kinds only")
        call = _lazy_call(unit, x)
    else:
        def call():
            return unit(x)

    with _pinned_core(), no_grad():
        for _ in range(warmup):
            call()
        times = []
        for _ in range(reps):
            t0 = time.perf_counter_ns()
            call()
            times.append(time.perf_counter_ns() - t0)
        tracemalloc.start()
        call()
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
    kept = mad_filter(times)
    return BenchResult(kind, tuple(window), n, float(np.median(kept)), _relation_bytes(unit),
                       unit.num_parameters() * BYTES, int(peak), len(kept))


def _lazy_call(unit: GatingUnit, x: Tensor):
    spec = unit.spec
    g = spec.groups
    c2 = spec.out_channels
    cg = c2 // g
    table = unit.rpe.table.data
    beta = unit.beta.data
    data = x.data[0]

    def call():
        x1, x2 = data[..., :c2], data[..., c2:]
        out = np.empty_like(x1)
        for i in range(g):
            sl = slice(i * cg, (i + 1) * cg)
            if spec.kind == "potgu":
                t = spec.window[0]
                cols = np.moveaxis(x1[..., sl], 0, -2).reshape(-1, t, cg)
                mixed = np.stack([lazy_mix(table[i], (t,), c) for c in cols])
                mixed = np.moveaxis(mixed.reshape(x1.shape[1], x1.shape[2], t, cg), -2, 0)
            elif spec.kind == "posgu":
                mixed = np.stack([lazy_mix(table[i], spec.window[1:], f.reshape(-1, cg)).reshape(f.shape)
                                  for f in x1[..., sl]])
            else:
                mixed = lazy_mix(table[i], spec.window, x1[..., sl].reshape(-1, cg)).reshape(x1[..., sl].shape)
            out[..., sl] = (mixed + beta[i]) * x2[..., sl]
        return out

    return call


def expected_param_bytes(kind: str, window, groups: int, channels: int = 64) -> int:
    return count_unit_params(GatingUnitSpec(kind, tuple(window), groups, channels), "paper") * BYTES


def run_sweep(kinds: Iterable[str], windows: Iterable[tuple[int, int, int]], channels: int = 64,
              groups: int = 8, reps: int = 30, max_bytes: int = 1 << 30) -> list[BenchResult]:
    out = []
    for kind in kinds:
        lazy = kind.endswith("-lazy")
        base = kind[:-5] if lazy else kind
        for win in windows:
            try:
                r = bench_operator(base, win, channels, groups, reps, max_bytes=max_bytes, lazy=lazy)
            except MemoryError:
                continue
            r.kind = kind
            out.append(r)
    return out


def write_csv(results: Sequence[BenchResult], fh) -> None:
    w = csv.writer(fh)
    w.writerow(["kind", "N", "params_bytes", "ns_median"])
    for r in results:
        w.writerow([r.kind, r.tokens, r.param_bytes, f"{r.ns_median:.0f}"])
