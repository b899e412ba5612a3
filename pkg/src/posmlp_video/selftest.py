"""Quick oracle and invariant checks that need no test runner."""

from __future__ import annotations

import itertools
from typing import Callable

import numpy as np

from . import rpe
from .accounting import count_unit_params
from .blocks import Block, BlockSpec, VARIANTS
from .gradcheck import finite_diff_check
from .network import window_partition, window_unpartition
from .tensor import Tensor
from .units import GatingUnit, GatingUnitSpec


def _counts() -> bool:
    want = {("potgu", (16, 7, 7)): 248, ("posgu", (16, 7, 7)): 1352, ("postgu", (16, 7, 7)): 41912,
            ("sgu", (16, 7, 7)): 615440}
    return all(count_unit_params(GatingUnitSpec(k, w, 8, 64), "paper") == n for (k, w), n in want.items())


def _pair_lookup() -> bool:
    ext = (3, 2, 4)
    d = rpe.new_dictionary("spatiotemporal", ext, 2, 1.0, seed=3)
    r = d.expand().data
    pos = list(itertools.product(*(range(e) for e in ext)))
    table = d.table.data.reshape(2, -1)
    brute = np.array([[[table[gi, rpe.offset_index(p, q, ext)] for q in pos] for p in pos] for gi in range(2)])
    return np.array_equal(r, brute) and all(rpe.is_block_toeplitz(r[i], ext) for i in range(2))


def _partition_roundtrip() -> bool:
    x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 8, 12, 5)))
    return np.array_equal(window_unpartition(window_partition(x, (4, 6)), (8, 12)).data, x.data)


def _order_sensitivity() -> bool:
    a, b, c = 0.3, -1.1, 2.5  # offsets -1, 0, +1
    u = GatingUnit(GatingUnitSpec("potgu", (2, 1, 1), 1, 2))
    u.rpe.table.data[:] = [[a, b, c]]
    u.beta.data[:] = 0.0

    def run(x1):
        v = np.zeros((1, 2, 1, 1, 2))
        v[0, :, 0, 0, 0] = x1
        v[..., 1] = 1.0
        return u(Tensor(v)).data[0, :, 0, 0, 0]

    return np.array_equal(run([1.0, 0.0]), [b, c]) and np.array_equal(run([0.0, 1.0]), [a, b])


def _block_gradients() -> bool:
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((2, 2, 2, 2, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((2, 2, 2, 2, 4)))
    worst = 0.0
    for v in VARIANTS:
        blk = Block(BlockSpec(v, 4, 2, (2, 2, 2), 2), np.random.default_rng(1), 0.5, 0.5)
        worst = max(worst, finite_diff_check(lambda: (blk(x) * w).sum(), x, indices=range(0, 32, 5)))
    return worst < 1e-4


CHECKS: dict[str, Callable[[], bool]] = {
    "unit parameter counts": _counts,
    "expansion equals pair lookup, Toeplitz": _pair_lookup,
    "window partition round-trip": _partition_roundtrip,
    "T=2 order sensitivity": _order_sensitivity,
    "block input gradients": _block_gradients,
}


def run(echo: Callable[[str], None] = print) -> bool:
    ok = True
    for name, fn in CHECKS.items():
        try:
            passed = bool(fn())
        except Exception as err:  # report, keep going
            passed = False
            name = f"{name} ({type(err).__name__}: {err})"
        echo(f"{'PASS' if passed else 'FAIL'}  {name}")
        ok &= passed
    return ok
