"""Learnable relative-position dictionaries and their expansion into relation matrices.

A dictionary over a window of per-axis extents ``(M_1, ..., M_k)`` stores
``g x (2M_1-1) x ... x (2M_k-1)`` biases.  Positions are flattened
time-major then row-major (t, h, w); the relation matrix entry for the token
pair ``(i, j)`` reads the bias at per-axis offset ``p_i - p_j + (M - 1)``.
"""

from __future__ import annotations

from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .nn import Module, param, trunc_normal
from .tensor import Tensor

KINDS = {"temporal": 1, "spatial": 2, "spatiotemporal": 3}


def table_shape(extents: Sequence[int]) -> tuple[int, ...]:
    return tuple(2 * m - 1 for m in extents)


def offset_index(pos_i: Sequence[int], pos_j: Sequence[int], extents: Sequence[int]) -> int:
    """Flat dictionary index of the offset between two window positions."""
    if not (len(pos_i) == len(pos_j) == len(extents)):
        raise ValueError("positions and extents must have the same rank")
    flat = 0
    for a, b, m in zip(pos_i, pos_j, extents):
        if not (0 <= a < m and 0 <= b < m):
            raise ValueError(f"position out of range for extent {m}: {a}, {b}")
        flat = flat * (2 * m - 1) + (a - b) + (m - 1)
    return flat


@lru_cache(maxsize=256)
def relation_index(extents: tuple[int, ...], runtime: Optional[tuple[int, ...]] = None) -> np.ndarray:
    """N x N array of flat dictionary indices for every token pair.

    ``runtime`` extents may be smaller than the dictionary's ``extents``; the
    lookup then reads the centred sub-table, so offsets keep their meaning.
    """
    runtime = extents if runtime is None else runtime
    if len(runtime) != len(extents) or any(r < 1 or r > m for r, m in zip(runtime, extents)):
        raise ValueError(f"runtime extents {runtime} incompatible with dictionary extents {extents}")
    idx = np.zeros((1, 1), dtype=np.intp)
    for r, m in zip(runtime, extents):
        p = np.arange(r)
        axis = p[:, None] - p[None, :] + (m - 1)
        # Kronecker-style combination keeps the time-major, row-major flattening.
        idx = (idx[:, None, :, None] * (2 * m - 1) + axis[None, :, None, :]).reshape(idx.shape[0] * r, -1)
    idx.setflags(write=False)
    return idx


class RelPosDictionary(Module):
    """g learnable bias tables, one per channel group."""

    def __init__(self, kind: str, extents: Sequence[int], groups: int,
                 init_std: float = 0.02, rng: Optional[np.random.Generator] = None):
        if kind not in KINDS:
            raise ValueError(f"unknown dictionary kind {kind!r}")
        extents = tuple(int(e) for e in extents)
        if len(extents) != KINDS[kind]:
            raise ValueError(f"{kind} dictionary needs {KINDS[kind]} extents, got {extents}")
        if groups < 1 or any(e < 1 for e in extents):
            raise ValueError("extents and groups must be >= 1")
        self.kind = kind
        self.extents = extents
        self.groups = groups
        shape = (groups,) + table_shape(extents)
        rng = rng if rng is not None else np.random.default_rng(0)
        data = trunc_normal(rng, shape, init_std) if init_std > 0 else np.zeros(shape)
        self.table = param(data)

    @property
    def num_params(self) -> int:
        return self.table.size

    def expand(self, runtime: Optional[Sequence[int]] = None) -> Tensor:
        """Relation matrices, shape (g, N, N); differentiable w.r.t. the table."""
        rt = None if runtime is None else tuple(runtime)
        idx = relation_index(self.extents, rt)
        flat = self.table.reshape(self.groups, -1)
        return T.take(flat, idx)


def new_dictionary(kind: str, extents: Sequence[int], groups: int,
                   init_std: float = 0.02, seed: int = 0) -> RelPosDictionary:
    return RelPosDictionary(kind, extents, groups, init_std, np.random.default_rng(seed))


def expand(dictionary: RelPosDictionary, runtime: Optional[Sequence[int]] = None) -> Tensor:
    return dictionary.expand(runtime)


def lazy_mix(table: np.ndarray, extents: Sequence[int], x: np.ndarray) -> np.ndarray:
    """Apply the relation matrix of one dictionary group to ``x`` (N x K) without
    materializing it: accumulates one shifted slab per offset.

    Memory stays O(N K); used by the operator micro-benchmark.
    """
    extents = tuple(extents)
    grid = x.reshape(extents + (-1,))
    out = np.zeros_like(grid)
    tshape = table_shape(extents)
    for flat in range(int(np.prod(tshape))):
        offs = np.unravel_index(flat, tshape)
        deltas = [o - (m - 1) for o, m in zip(offs, extents)]
        dst, src = [], []
        for d, m in zip(deltas, extents):
            # out[p] += table[d] * x[p - d]
            dst.append(slice(max(d, 0), m + min(d, 0)))
            src.append(slice(max(-d, 0), m - max(d, 0)))
        out[tuple(dst)] += table[offs] * grid[tuple(src)]
    return out.reshape(x.shape)


# ---------------------------------------------------------------- export


def write_csv(matrix: np.ndarray, path: Path) -> None:
    np.savetxt(path, matrix, delimiter=",", fmt="%.17g")


def read_csv(path: Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def write_pgm(matrix: np.ndarray, path: Path) -> None:
    """8-bit binary PGM heatmap, min-max normalized (constant input maps to 0)."""
    m = np.asarray(matrix, dtype=np.float64)
    lo, hi = m.min(), m.max()
    scaled = np.zeros_like(m) if hi == lo else (m - lo) / (hi - lo)
    pix = np.round(scaled * 255).astype(np.uint8)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def is_block_toeplitz(matrix: np.ndarray, extents: Sequence[int]) -> bool:
    """True when every entry depends only on the per-axis offset of its token pair."""
    extents = tuple(extents)
    idx = relation_index(extents)
    seen: dict[int, float] = {}
    for k, v in zip(idx.ravel(), np.asarray(matrix).ravel()):
        if seen.setdefault(int(k), v) != v:
            return False
    return True
