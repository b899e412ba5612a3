"""PosMLP modules and their spatio-temporal block compositions.

A PosMLP module is ``x + DropPath(FC2(Unit(GELU(FC1(LN(x))))))`` with FC1
widening C to r_e*C and FC2 mapping the unit's r_e*C/2 output back to C.
Blocks combine a temporal and a spatial unit (cascaded or in parallel) or use
a single joint spatio-temporal unit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear, Module, drop_path
from .tensor import Tensor
from .units import GatingUnit, GatingUnitSpec

VARIANTS = (
    "cascade_ts", "cascade_st",
    "parallel_v1", "parallel_v2", "parallel_v3", "parallel_v4",
    "joint", "temporal", "spatial", "sgu_tgu",
)


@dataclass(frozen=True)
class PosModuleSpec:
    kind: str
    channels: int
    expansion: int
    window: tuple[int, int, int]
    groups: int
    drop_path_rate: float = 0.0

    @property
    def unit(self) -> GatingUnitSpec:
        return GatingUnitSpec(self.kind, self.window, self.groups, self.expansion * self.channels)


@dataclass(frozen=True)
class BlockSpec:
    variant: str
    channels: int
    expansion: int
    window: tuple[int, int, int]
    groups: int
    drop_path_rate: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown block variant {self.variant!r}; expected one of {VARIANTS}")

    def module(self, kind: str, window=None) -> PosModuleSpec:
        return PosModuleSpec(kind, self.channels, self.expansion, window or self.window,
                             self.groups, self.drop_path_rate)


class PosModule(Module):
    def __init__(self, spec: PosModuleSpec, rng: np.random.Generator,
                 init_std: float = 0.02, dict_std: float = 0.02):
        unit = spec.unit  # validates divisibility
        c, hidden = spec.channels, unit.in_channels
        self.spec = spec
        self.norm = LayerNorm(c)
        self.fc1 = Linear(c, hidden, rng, init_std)
        self.unit = GatingUnit(unit, rng, dict_std)
        self.fc2 = Linear(unit.out_channels, c, rng, init_std)

    def branch(self, x: Tensor) -> Tensor:
        return self.fc2(self.unit(T.gelu(self.fc1(self.norm(x)))))

    def __call__(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return x + drop_path(self.branch(x), self.spec.drop_path_rate, self.training, rng)


def pos_module_forward(module: PosModule, x: Tensor, rng=None) -> Tensor:
    return module(x, rng)


class _SharedExpansion(Module):
    """Parallel V2/V3/V4: one LN and one expand FC feeding both units."""

    def __init__(self, spec: BlockSpec, rng: np.random.Generator, init_std: float, dict_std: float):
        c, r = spec.channels, spec.expansion
        hidden = r * c
        split = spec.variant == "parallel_v2"
        unit_in = hidden // 2 if split else hidden
        self.norm = LayerNorm(c)
        self.fc1 = Linear(c, hidden, rng, init_std)
        self.temporal_unit = GatingUnit(GatingUnitSpec("potgu", spec.window, spec.groups, unit_in), rng, dict_std)
        self.spatial_unit = GatingUnit(GatingUnitSpec("posgu", spec.window, spec.groups, unit_in), rng, dict_std)
        unit_out = unit_in // 2
        fc2_in = unit_out if spec.variant == "parallel_v4" else 2 * unit_out
        self.fc2 = Linear(fc2_in, c, rng, init_std)
        self.variant = spec.variant
        self.rate = spec.drop_path_rate

    def __call__(self, x: Tensor, rng=None, image_mode: bool = False) -> Tensor:
        h = T.gelu(self.fc1(self.norm(x)))
        if self.variant == "parallel_v2":
            ht, hs = T.split(h, 2, axis=-1)
        else:
            ht = hs = h
        zs = self.spatial_unit(hs)
        if image_mode:
            zt = None
        else:
            zt = self.temporal_unit(ht)
        if self.variant == "parallel_v4":
            z = zs if zt is None else zt + zs
        else:
            if zt is None:
                zt = Tensor(np.zeros(zs.shape))
            z = T.concat([zt, zs], axis=-1)
        return x + drop_path(self.fc2(z), self.rate, self.training, rng)


class Block(Module):
    def __init__(self, spec: BlockSpec, rng: Optional[np.random.Generator] = None,
                 init_std: float = 0.02, dict_std: float = 0.02):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = spec
        v = spec.variant
        if v in ("cascade_ts", "cascade_st", "parallel_v1"):
            self.temporal = PosModule(spec.module("potgu"), rng, init_std, dict_std)
            self.spatial = PosModule(spec.module("posgu"), rng, init_std, dict_std)
        elif v in ("parallel_v2", "parallel_v3", "parallel_v4"):
            self.mixer = _SharedExpansion(spec, rng, init_std, dict_std)
        elif v == "joint":
            self.joint = PosModule(spec.module("postgu"), rng, init_std, dict_std)
        elif v == "temporal":
            self.temporal = PosModule(spec.module("potgu"), rng, init_std, dict_std)
        elif v == "spatial":
            self.spatial = PosModule(spec.module("posgu"), rng, init_std, dict_std)
        elif v == "sgu_tgu":
            t, h, w = spec.window
            self.temporal = PosModule(spec.module("tgu"), rng, init_std, dict_std)
            # frames are separate temporal windows of extent 1 for the dense spatial unit
            self.spatial = PosModule(spec.module("sgu", (1, h, w)), rng, init_std, dict_std)

    def __call__(self, x: Tensor, rng: Optional[np.random.Generator] = None,
                 image_mode: bool = False) -> Tensor:
        v = self.spec.variant
        if v == "cascade_ts":
            if not image_mode:
                x = self.temporal(x, rng)
            return self.spatial(x, rng)
        if v == "cascade_st":
            x = self.spatial(x, rng)
            return x if image_mode else self.temporal(x, rng)
        if v in ("parallel_v1", "sgu_tgu"):
            rate, train = self.spec.drop_path_rate, self.training
            y = x
            if not image_mode:
                y = y + drop_path(self.temporal.branch(x), rate, train, rng)
            return y + drop_path(self.spatial.branch(x), rate, train, rng)
        if v.startswith("parallel"):
            return self.mixer(x, rng, image_mode)
        if v == "joint":
            return x if image_mode else self.joint(x, rng)
        if v == "temporal":
            return x if image_mode else self.temporal(x, rng)
        return self.spatial(x, rng)


def block_forward(block: Block, x: Tensor, rng=None, image_mode: bool = False) -> Tensor:
    return block(x, rng, image_mode)
