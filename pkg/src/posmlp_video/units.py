"""Positional gating units and their dense gMLP baselines.

All units compute ``Z = (R X1 + b) * X2`` on the two channel halves of the
input, where ``R`` mixes tokens along the unit's axis set:

========  =================  ======================================
kind      token axes         R
========  =================  ======================================
potgu     time               g expanded 1D relative-position tables
posgu     height, width      g expanded 2D tables
postgu    time, h, w         g expanded 3D tables
tgu       time               one dense T x T matrix (+ token bias)
sgu       time, h, w         one dense THW x THW matrix (+ token bias)
========  =================  ======================================

For positional kinds ``b`` is one learnable scalar per group (init 1), so a
zero dictionary passes ``X2`` through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .nn import Module, param, trunc_normal
from .rpe import RelPosDictionary
from .tensor import Tensor

UNIT_AXES = {
    "potgu": ("t",),
    "posgu": ("h", "w"),
    "postgu": ("t", "h", "w"),
    "tgu": ("t",),
    "sgu": ("t", "h", "w"),
}
POSITIONAL = {"potgu": "temporal", "posgu": "spatial", "postgu": "spatiotemporal"}


@dataclass(frozen=True)
class GatingUnitSpec:
    kind: str
    window: tuple[int, int, int]
    groups: int
    in_channels: int

    def __post_init__(self):
        if self.kind not in UNIT_AXES:
            raise ValueError(f"unknown unit kind {self.kind!r}")
        if len(self.window) != 3 or any(w < 1 for w in self.window):
            raise ValueError(f"window must be three positive extents, got {self.window}")
        if self.groups < 1:
            raise ValueError("groups must be >= 1")
        c = self.in_channels
        if c % 2:
            raise ValueError(f"in_channels must be even, got {c}")
        if self.positional and (c // 2) % self.groups:
            raise ValueError(f"half width {c // 2} not divisible by {self.groups} groups")

    @property
    def positional(self) -> bool:
        return self.kind in POSITIONAL

    @property
    def out_channels(self) -> int:
        return self.in_channels // 2

    @property
    def axes(self) -> tuple[str, ...]:
        return UNIT_AXES[self.kind]

    @property
    def extents(self) -> tuple[int, ...]:
        lookup = dict(zip("thw", self.window))
        return tuple(lookup[a] for a in self.axes)

    @property
    def temporal(self) -> bool:
        """True when the unit's parameters are tied to the clip length."""
        return self.kind in ("potgu", "postgu", "tgu") or (self.kind == "sgu" and self.window[0] > 1)

    @property
    def tokens(self) -> int:
        return int(np.prod(self.extents))


def split_halves(v: Tensor) -> tuple[Tensor, Tensor]:
    """First C/2 channels and remaining C/2 channels."""
    if v.shape[-1] % 2:
        raise ValueError(f"cannot halve odd channel extent {v.shape[-1]}")
    a, b = T.split(v, 2, axis=-1)
    return a, b


def group_split(x: Tensor, groups: int) -> list[Tensor]:
    """Contiguous, order-preserving channel chunks."""
    return T.split(x, groups, axis=-1)


# axes of the working layout (B, nT, t, H, W, g, cg)
_AXIS_POS = {"t": 2, "h": 3, "w": 4}


class GatingUnit(Module):
    def __init__(self, spec: GatingUnitSpec, rng: Optional[np.random.Generator] = None,
                 init_std: float = 0.02):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = spec
        if spec.positional:
            self.rpe = RelPosDictionary(POSITIONAL[spec.kind], spec.extents, spec.groups, init_std, rng)
            self.beta = param(np.ones(spec.groups))
        else:
            n = spec.tokens
            self.weight = param(trunc_normal(rng, (n, n), init_std))
            self.bias = param(np.ones(n))

    def relation(self, runtime: tuple[int, ...]) -> Tensor:
        if self.spec.positional:
            return self.rpe.expand(runtime)
        if runtime != self.spec.extents:
            raise ValueError(f"dense {self.spec.kind} unit needs window {self.spec.extents}, got {runtime}")
        return self.weight.reshape(1, *self.weight.shape)

    def _layout(self, v: Tensor) -> tuple[int, int, int, int, int]:
        b, t, h, w, c = v.shape
        spec = self.spec
        if c != spec.in_channels:
            raise ValueError(f"unit expects {spec.in_channels} channels, got {c}")
        wt, wh, ww = spec.window
        if "h" in spec.axes and (h > wh or w > ww or (not spec.positional and (h, w) != (wh, ww))):
            raise ValueError(f"spatial extent {h}x{w} does not fit window {wh}x{ww}")
        if "t" in spec.axes and t > wt:
            if t % wt:
                raise ValueError(f"clip length {t} not divisible by temporal window {wt}")
            return b, t // wt, wt, h, w
        return b, 1, t, h, w

    def __call__(self, v: Tensor) -> Tensor:
        spec = self.spec
        b, nt, t, h, w = self._layout(v)
        g = spec.groups if spec.positional else 1
        c2 = spec.out_channels
        cg = c2 // g
        x1, x2 = split_halves(v)

        token_axes = tuple(_AXIS_POS[a] for a in spec.axes)
        batch_axes = tuple(a for a in (0, 1, 2, 3, 4) if a not in token_axes)
        perm = (5,) + token_axes + batch_axes + (6,)
        sizes = (b, nt, t, h, w, g, cg)
        runtime = tuple(sizes[a] for a in token_axes)
        n = int(np.prod(runtime))

        x = x1.reshape(sizes).transpose(perm).reshape(g, n, -1)
        r = self.relation(runtime)
        mixed = T.token_mix(r, x)
        if spec.positional:
            mixed = mixed + self.beta.reshape(g, 1, 1)
        else:
            mixed = mixed + self.bias.reshape(1, n, 1)
        permuted = tuple(sizes[a] for a in perm)
        inv = tuple(np.argsort(perm))
        z = mixed.reshape(permuted).transpose(inv).reshape(v.shape[:-1] + (c2,))
        return T.hadamard(z, x2)


def gate_forward(unit: GatingUnit, v: Tensor) -> Tensor:
    return unit(v)
