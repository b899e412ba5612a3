"""Closed-form parameter and FLOP counts, computed from configs without building tensors.

Parameter conventions:

* ``table1`` -- dictionaries only for positional units, N^2 for dense units
  (bias-free, as in the unit comparison table);
* ``text``   -- adds the per-group gating offsets of positional units and the
  per-token bias of dense units.  This is what a built model stores;
* ``paper``  -- relation parameters only: dictionaries for positional units,
  weight plus token bias for dense units (the figures quoted when comparing
  units head to head).

FLOPs count multiply-accumulates as 1 (``mac``) or 2 (``2mac``) operations;
element-wise work (norms, GELU, gating product, residual adds, pooling) adds
one operation per element per step in both conventions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import BlockSpec
from .config import ModelConfig
from .units import GatingUnitSpec

CONVENTIONS = ("table1", "text", "paper")
FLOP_CONVENTIONS = ("mac", "2mac")

NORM_OPS = 4  # centre, scale, gain, shift
GATE_OPS = 2  # offset add, product


def count_unit_params(spec: GatingUnitSpec, convention: str = "table1") -> int:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    g = spec.groups
    t, h, w = spec.window
    if spec.kind == "potgu":
        n = g * (2 * t - 1)
    elif spec.kind == "posgu":
        n = g * (2 * h - 1) * (2 * w - 1)
    elif spec.kind == "postgu":
        n = g * (2 * t - 1) * (2 * h - 1) * (2 * w - 1)
    else:
        tokens = spec.tokens
        return tokens * tokens + (0 if convention == "table1" else tokens)
    return n + (g if convention == "text" else 0)


def _linear(cin: int, cout: int) -> int:
    return cin * cout + cout


def _conv(k: int, cin: int, cout: int) -> int:
    return k * k * cin * cout + cout


@dataclass
class BlockCount:
    fc: int = 0
    dictionary: int = 0
    norm: int = 0

    @property
    def total(self) -> int:
        return self.fc + self.dictionary + self.norm

    def __iadd__(self, other: "BlockCount") -> "BlockCount":
        self.fc += other.fc
        self.dictionary += other.dictionary
        self.norm += other.norm
        return self


def _block_units(spec: BlockSpec) -> list[GatingUnitSpec]:
    c, r, win, g = spec.channels, spec.expansion, spec.window, spec.groups
    v = spec.variant
    if v in ("cascade_ts", "cascade_st", "parallel_v1"):
        return [GatingUnitSpec("potgu", win, g, r * c), GatingUnitSpec("posgu", win, g, r * c)]
    if v == "parallel_v2":
        return [GatingUnitSpec("potgu", win, g, r * c // 2), GatingUnitSpec("posgu", win, g, r * c // 2)]
    if v in ("parallel_v3", "parallel_v4"):
        return [GatingUnitSpec("potgu", win, g, r * c), GatingUnitSpec("posgu", win, g, r * c)]
    if v == "joint":
        return [GatingUnitSpec("postgu", win, g, r * c)]
    if v == "temporal":
        return [GatingUnitSpec("potgu", win, g, r * c)]
    if v == "spatial":
        return [GatingUnitSpec("posgu", win, g, r * c)]
    if v == "sgu_tgu":
        return [GatingUnitSpec("tgu", win, g, r * c), GatingUnitSpec("sgu", (1,) + tuple(win[1:]), g, r * c)]
    raise ValueError(f"unknown variant {v!r}")


def count_block_params(spec: BlockSpec, convention: str = "text") -> BlockCount:
    c, r = spec.channels, spec.expansion
    units = _block_units(spec)
    out = BlockCount()
    out.dictionary = sum(count_unit_params(u, convention) for u in units)
    if spec.variant in ("parallel_v2", "parallel_v3", "parallel_v4"):
        unit_out = units[0].out_channels
        fc2_in = unit_out if spec.variant == "parallel_v4" else 2 * unit_out
        out.norm = 2 * c
        out.fc = _linear(c, r * c) + _linear(fc2_in, c)
    else:
        # one full PosMLP module (LN, FC1, unit, FC2) per unit
        out.norm = 2 * c * len(units)
        out.fc = len(units) * (_linear(c, r * c) + _linear(r * c // 2, c))
    return out


def _embed_params(config: ModelConfig) -> int:
    c = config.channels[0]
    if config.patch_version == "v1":
        return _conv(4, 3, c) + 2 * c
    k = 3 if config.patch_version == "v3" else 2
    mid = c // 2
    return _conv(k, 3, mid) + 2 * mid + _conv(k, mid, c) + 2 * c


def _block_specs(config: ModelConfig, stage: int) -> list[BlockSpec]:
    return [BlockSpec(config.block_variant, config.channels[stage], config.expansion,
                      config.windows[stage], config.groups[stage])
            for _ in range(config.depths[stage])]


@dataclass
class CountReport:
    convention: str
    embedding: int = 0
    stages: list[BlockCount] = field(default_factory=list)
    downsamplers: list[int] = field(default_factory=list)
    head: int = 0

    @property
    def components(self) -> dict[str, int]:
        comp = {"embedding": self.embedding}
        for i, s in enumerate(self.stages, 1):
            comp[f"stage{i}.fc"] = s.fc
            comp[f"stage{i}.dictionary"] = s.dictionary
            comp[f"stage{i}.norm"] = s.norm
        for i, d in enumerate(self.downsamplers, 1):
            comp[f"down{i}"] = d
        comp["head"] = self.head
        return comp

    @property
    def total(self) -> int:
        return sum(self.components.values())

    def to_dict(self) -> dict:
        return {"convention": self.convention, "components": self.components, "total": self.total}


def count_model_params(config: ModelConfig, convention: str = "text") -> CountReport:
    config.validate()
    rep = CountReport(convention)
    rep.embedding = _embed_params(config)
    c = config.channels
    for s in range(config.num_stages):
        acc = BlockCount()
        for spec in _block_specs(config, s):
            acc += count_block_params(spec, convention)
        rep.stages.append(acc)
        if s + 1 < config.num_stages:
            rep.downsamplers.append(_conv(3, c[s], c[s + 1]) + 2 * c[s + 1])
    rep.head = 2 * c[-1] + _linear(c[-1], config.num_classes)
    return rep


# ---------------------------------------------------------------- FLOPs


@dataclass
class FlopReport:
    convention: str
    macs: dict[str, int] = field(default_factory=dict)
    elementwise: dict[str, int] = field(default_factory=dict)
    shapes: list[tuple[int, int, int, int]] = field(default_factory=list)

    def _add(self, table: dict, key: str, n: int) -> None:
        table[key] = table.get(key, 0) + int(n)

    @property
    def mac_factor(self) -> int:
        return 2 if self.convention == "2mac" else 1

    def by_component(self) -> dict[str, float]:
        keys = list(dict.fromkeys(list(self.macs) + list(self.elementwise)))
        return {k: self.mac_factor * self.macs.get(k, 0) + self.elementwise.get(k, 0) for k in keys}

    @property
    def total(self) -> int:
        return sum(self.by_component().values())

    @property
    def gflops(self) -> float:
        return self.total / 1e9

    def to_dict(self) -> dict:
        return {"convention": self.convention, "gflops": self.gflops,
                "components": {k: v / 1e9 for k, v in self.by_component().items()},
                "stage_shapes": [list(s) for s in self.shapes]}


def _unit_macs(unit: GatingUnitSpec, t: int, h: int, w: int) -> int:
    """Token-mixing MACs of one unit over a full (t, h, w) feature map."""
    wt = unit.window[0]
    mix = {"t": min(t, wt), "h": unit.window[1], "w": unit.window[2]}
    n = int(np.prod([mix[a] for a in unit.axes]))
    return t * h * w * n * unit.out_channels


def count_model_flops(config: ModelConfig, input_shape=None, convention: str = "mac") -> FlopReport:
    """Per-clip cost of one forward pass; ``input_shape`` is (T, H, W), default from config."""
    if convention not in FLOP_CONVENTIONS:
        raise ValueError(f"unknown FLOP convention {convention!r}")
    if input_shape is not None:
        config = ModelConfig(**{**config.__dict__, "input_size": tuple(input_shape)})
    config.validate()
    rep = FlopReport(convention)
    tin, hin, win = config.input_size
    c = config.channels

    # patch embedding
    if config.patch_version == "v1":
        t, h, w = tin, hin // 4, win // 4
        rep._add(rep.macs, "embedding", t * h * w * 16 * 3 * c[0])
        rep._add(rep.elementwise, "embedding", NORM_OPS * t * h * w * c[0])
    else:
        k = 3 if config.patch_version == "v3" else 2
        mid = c[0] // 2
        t, h, w = tin, hin // 2, win // 2
        rep._add(rep.macs, "embedding", t * h * w * k * k * 3 * mid)
        rep._add(rep.elementwise, "embedding", (NORM_OPS + 1) * t * h * w * mid)
        h, w = h // 2, w // 2
        rep._add(rep.macs, "embedding", t * h * w * k * k * mid * c[0])
        rep._add(rep.elementwise, "embedding", NORM_OPS * t * h * w * c[0])

    extents = config.stage_extents()
    for s in range(config.num_stages):
        t, h, w = extents[s]
        if s:
            key = f"down{s}"
            rep._add(rep.macs, key, t * h * w * 9 * c[s - 1] * c[s])
            rep._add(rep.elementwise, key, NORM_OPS * t * h * w * c[s])
        rep.shapes.append((t, h, w, c[s]))
        tokens = t * h * w
        key = f"stage{s + 1}"
        for spec in _block_specs(config, s):
            units = _block_units(spec)
            cc, r = spec.channels, spec.expansion
            shared = spec.variant in ("parallel_v2", "parallel_v3", "parallel_v4")
            modules = 1 if shared else len(units)
            if shared:
                unit_out = units[0].out_channels
                fc2_in = unit_out if spec.variant == "parallel_v4" else 2 * unit_out
                fc = cc * r * cc + fc2_in * cc
            else:
                fc = len(units) * (cc * r * cc + (r * cc // 2) * cc)
            rep._add(rep.macs, key, tokens * fc)
            for u in units:
                rep._add(rep.macs, key, _unit_macs(u, t, h, w))
                rep._add(rep.elementwise, key, GATE_OPS * tokens * u.out_channels)
            # LN, GELU on the expanded width, residual add
            rep._add(rep.elementwise, key, modules * tokens * (NORM_OPS * cc + r * cc + cc))
    t, h, w = extents[-1]
    rep._add(rep.macs, "head", c[-1] * config.num_classes)
    rep._add(rep.elementwise, "head", (NORM_OPS + 1) * t * h * w * c[-1])
    return rep


def calibrate_flops(config: ModelConfig, target_gflops: float, input_shape=None) -> tuple[str, float]:
    """Convention whose estimate lies closest (relatively) to a reported figure."""
    best = min(FLOP_CONVENTIONS, key=lambda cv: abs(count_model_flops(config, input_shape, cv).gflops / target_gflops - 1))
    return best, count_model_flops(config, input_shape, best).gflops
