"""Model configuration: presets, JSON round-trip and validation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .blocks import VARIANTS

PATCH_VERSIONS = ("v1", "v2", "v3")


@dataclass
class ModelConfig:
    variant: str = "S"
    depths: tuple[int, ...] = (3, 4, 9, 3)
    channels: tuple[int, ...] = (72, 144, 288, 576)
    expansion: int = 2
    groups: tuple[int, ...] = (8, 16, 32, 64)
    windows: tuple[tuple[int, int, int], ...] = ((16, 14, 14), (16, 14, 14), (16, 14, 14), (16, 7, 7))
    input_size: tuple[int, int, int] = (16, 224, 224)
    patch_version: str = "v3"
    block_variant: str = "parallel_v1"
    num_classes: int = 400
    drop_path_rate: float = 0.0
    init_std: float = 0.02
    dict_init_std: float = 0.02
    temporal_stride: int = 1  # experimental T-halving after patch embedding

    def __post_init__(self):
        self.depths = tuple(int(d) for d in self.depths)
        self.channels = tuple(int(c) for c in self.channels)
        self.groups = tuple(int(g) for g in self.groups)
        self.windows = tuple(tuple(int(v) for v in w) for w in self.windows)
        self.input_size = tuple(int(v) for v in self.input_size)

    @property
    def num_stages(self) -> int:
        return len(self.depths)

    def stage_extents(self) -> list[tuple[int, int, int]]:
        """(T, H, W) token grid of every stage."""
        t, h, w = self.input_size
        t = -(-t // self.temporal_stride)
        h, w = h // 4, w // 4
        out = [(t, h, w)]
        for _ in range(self.num_stages - 1):
            h, w = -(-h // 2), -(-w // 2)
            out.append((t, h, w))
        return out

    def validate(self) -> "ModelConfig":
        n = self.num_stages
        for name in ("channels", "groups", "windows"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} must have one entry per stage ({n})")
        if self.block_variant not in VARIANTS:
            raise ValueError(f"unknown block variant {self.block_variant!r}")
        if self.patch_version not in PATCH_VERSIONS:
            raise ValueError(f"unknown patch version {self.patch_version!r}")
        if any(d < 0 for d in self.depths) or self.expansion < 1 or self.num_classes < 1:
            raise ValueError("depths, expansion and num_classes must be positive")
        _, h, w = self.input_size
        if h % 4 or w % 4:
            raise ValueError(f"input spatial extent {h}x{w} must be divisible by 4")
        if self.channels[0] % 2 and self.patch_version != "v1":
            raise ValueError("two-layer patch embeddings need an even first-stage width")
        divisor = 4 if self.block_variant == "parallel_v2" else 2
        for s, ((t, hs, ws), (wt, wh, ww), c, g) in enumerate(
                zip(self.stage_extents(), self.windows, self.channels, self.groups), 1):
            if hs % wh or ws % ww:
                raise ValueError(f"stage {s}: window {wh}x{ww} does not tile {hs}x{ws}")
            if t > wt and t % wt:
                raise ValueError(f"stage {s}: temporal window {wt} does not tile T={t}")
            if (self.expansion * c) % (divisor * g):
                raise ValueError(f"stage {s}: unit width {self.expansion * c // divisor} not divisible by g={g}")
        return self

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        return {k: (list(map(list, v)) if k == "windows" else list(v) if isinstance(v, tuple) else v)
                for k, v in d.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        base = preset(d.get("variant", "custom"))
        merged = {**dataclasses.asdict(base), **d}
        return cls(**merged).validate()

    @classmethod
    def from_json(cls, path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


_PRESETS: dict[str, dict[str, Any]] = {
    "S": dict(depths=(3, 4, 9, 3), expansion=2),
    "B": dict(depths=(4, 6, 15, 4), expansion=2),
    "L": dict(depths=(4, 6, 15, 4), expansion=4),
    # CPU-scale model for the synthetic tasks
    "toy": dict(depths=(1, 1, 2, 1), channels=(16, 32, 64, 128), groups=(2, 4, 8, 8),
                windows=((8, 8, 8), (8, 4, 4), (8, 2, 2), (8, 1, 1)), input_size=(8, 32, 32),
                num_classes=2),
    # smallest model used for whole-network gradient checks
    "micro": dict(depths=(1, 1, 1, 1), channels=(8, 16, 32, 64), groups=(1, 1, 2, 2),
                  windows=((4, 4, 4), (4, 2, 2), (4, 1, 1), (4, 1, 1)), input_size=(4, 16, 16),
                  num_classes=3),
}


def preset(name: str, **overrides) -> ModelConfig:
    """Named configuration (S, B, L, toy, micro or custom) with field overrides."""
    if name != "custom" and name not in _PRESETS:
        raise ValueError(f"unknown preset {name!r}")
    fields = dict(_PRESETS.get(name, {}))
    fields.update(overrides)
    return ModelConfig(variant=name, **fields)
