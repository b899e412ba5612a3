"""Hierarchical video backbone: patch embedding, four windowed stages, downsampling, head."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .blocks import Block, BlockSpec
from .config import ModelConfig
from .nn import BatchNorm, Conv2d, LayerNorm, Linear, Module, WindowedRNG
from .tensor import Tensor
from .units import GatingUnit


def window_partition(x: Tensor, window: tuple[int, int]) -> Tensor:
    """(B, T, H, W, C) -> (B * nh * nw, T, h, w, C), windows in row-major grid order."""
    b, t, h, w, c = x.shape
    wh, ww = window
    if h % wh or w % ww:
        raise ValueError(f"window {wh}x{ww} does not tile {h}x{w}")
    nh, nw = h // wh, w // ww
    y = x.reshape(b, t, nh, wh, nw, ww, c).transpose(0, 2, 4, 1, 3, 5, 6)
    return y.reshape(b * nh * nw, t, wh, ww, c)


def window_unpartition(windows: Tensor, grid: tuple[int, int]) -> Tensor:
    """Inverse of ``window_partition``; ``grid`` is the full (H, W)."""
    n, t, wh, ww, c = windows.shape
    h, w = grid
    nh, nw = h // wh, w // ww
    b = n // (nh * nw)
    y = windows.reshape(b, nh, nw, t, wh, ww, c).transpose(0, 3, 1, 4, 2, 5, 6)
    return y.reshape(b, t, h, w, c)


class PatchEmbed(Module):
    """v3: two overlapping 3x3 stride-2 convs (BN, GELU, conv, BN); v2: two 2x2
    stride-2 convs; v1: one 4x4 stride-4 conv.  Spatial /4, time untouched."""

    def __init__(self, version: str, cin: int, cout: int, rng: np.random.Generator, std: float):
        self.version = version
        if version == "v1":
            self.conv1 = Conv2d(cin, cout, 4, 4, rng, std)
            self.bn1 = BatchNorm(cout)
        else:
            k = 3 if version == "v3" else 2
            mid = cout // 2
            self.conv1 = Conv2d(cin, mid, k, 2, rng, std)
            self.bn1 = BatchNorm(mid)
            self.conv2 = Conv2d(mid, cout, k, 2, rng, std)
            self.bn2 = BatchNorm(cout)

    def __call__(self, x: Tensor) -> Tensor:
        _, _, h, w, _ = x.shape
        if h % 4 or w % 4:
            raise ValueError(f"input {h}x{w} not divisible by 4")
        x = self.bn1(self.conv1(x))
        if self.version == "v1":
            return x
        return self.bn2(self.conv2(T.gelu(x)))


class Downsample(Module):
    """3x3 stride-2 conv followed by LayerNorm."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, std: float):
        self.conv = Conv2d(cin, cout, 3, 2, rng, std)
        self.norm = LayerNorm(cout)

    def __call__(self, x: Tensor) -> Tensor:
        _, _, h, w, _ = x.shape
        if (h % 2 and h != 1) or (w % 2 and w != 1):
            raise ValueError(f"cannot halve odd spatial extent {h}x{w}")
        return self.norm(self.conv(x))


def downsample(layer: Downsample, x: Tensor) -> Tensor:
    return layer(x)


class Stage(Module):
    """``depth`` blocks sharing parameters across the stage's spatial windows."""

    def __init__(self, specs: list[BlockSpec], rng: np.random.Generator, std: float, dict_std: float):
        self.window = specs[0].window if specs else None
        self.depth = len(specs)
        for i, spec in enumerate(specs, 1):
            setattr(self, f"block{i}", Block(spec, rng, std, dict_std))

    def blocks(self) -> list[Block]:
        return [getattr(self, f"block{i}") for i in range(1, self.depth + 1)]

    def __call__(self, x: Tensor, rng=None, image_mode: bool = False) -> Tensor:
        if not self.depth:
            return x
        _, _, h, w, _ = x.shape
        _, wh, ww = self.window
        y = window_partition(x, (wh, ww))
        wrng = WindowedRNG(rng, (h // wh) * (w // ww)) if rng is not None else None
        for blk in self.blocks():
            y = blk(y, wrng, image_mode)
        return window_unpartition(y, (h, w))


class Head(Module):
    """LayerNorm, global average over (T, H, W), linear classifier."""

    def __init__(self, c: int, classes: int, rng: np.random.Generator, std: float):
        self.norm = LayerNorm(c)
        self.fc = Linear(c, classes, rng, std)

    def pool(self, x: Tensor) -> Tensor:
        return self.norm(x).mean(axis=(1, 2, 3))

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc(self.pool(x))


def classify_head(head: Head, x: Tensor) -> Tensor:
    return head(x)


class PosMLPVideo(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        std, dstd = config.init_std, config.dict_init_std
        c = config.channels
        self.patch_embed = PatchEmbed(config.patch_version, 3, c[0], rng, std)
        total = sum(config.depths)
        rates = np.linspace(0.0, config.drop_path_rate, total) if total else []
        k = 0
        for s in range(config.num_stages):
            specs = []
            for _ in range(config.depths[s]):
                specs.append(BlockSpec(config.block_variant, c[s], config.expansion,
                                       config.windows[s], config.groups[s], float(rates[k])))
                k += 1
            setattr(self, f"stage{s + 1}", Stage(specs, rng, std, dstd))
            if s + 1 < config.num_stages:
                setattr(self, f"down{s + 1}", Downsample(c[s], c[s + 1], rng, std))
        self.head = Head(c[-1], config.num_classes, rng, std)

    def stages(self) -> list[Stage]:
        return [getattr(self, f"stage{s + 1}") for s in range(self.config.num_stages)]

    def features(self, x: Tensor, rng=None, image_mode: bool = False) -> list[Tensor]:
        """Per-stage outputs, each (B, T, H_s, W_s, C_s)."""
        if x.ndim == 4:
            x = x.reshape((1,) + x.shape)
        x = self.patch_embed(x)
        stride = self.config.temporal_stride
        if stride > 1:
            x = _temporal_subsample(x, stride)
        feats = []
        for s, stage in enumerate(self.stages()):
            if s:
                x = getattr(self, f"down{s}")(x)
            x = stage(x, rng, image_mode)
            feats.append(x)
        return feats

    def __call__(self, x: Tensor, rng=None, image_mode: bool = False) -> Tensor:
        """Logits (B, num_classes) for clips (B, T, H, W, 3)."""
        return self.head(self.features(x, rng, image_mode)[-1])

    def temporal_units(self) -> dict[str, GatingUnit]:
        """Units whose parameters depend on the clip length."""
        return {name: m for name, m in self.named_modules()
                if isinstance(m, GatingUnit) and m.spec.temporal}

    def temporal_parameter_names(self) -> set[str]:
        names = set()
        for prefix, unit in self.temporal_units().items():
            names.update(prefix + "." + n for n, _ in unit.named_parameters())
        return names


def _temporal_subsample(x: Tensor, stride: int) -> Tensor:
    idx = np.arange(0, x.shape[1], stride)
    moved = x.transpose(0, 2, 3, 4, 1)
    return T.take(moved, idx).transpose(0, 4, 1, 2, 3)


def model_forward(model: PosMLPVideo, x: Tensor, train: bool = False, rng=None) -> Tensor:
    model.train(train)
    return model(x, rng)


def image_mode_forward(model: PosMLPVideo, x: Tensor, train: bool = False, rng=None) -> Tensor:
    """Forward on still images (T = 1) with every temporal branch replaced by its residual."""
    t = x.shape[-4]
    if t != 1:
        raise ValueError(f"image mode needs T = 1, got T = {t}")
    model.train(train)
    return model(x, rng, image_mode=True)
