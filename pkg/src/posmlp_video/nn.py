"""Module containers, parameter naming and initialization."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import BatchNormState, Tensor


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std by resampling."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Module:
    """Attribute-walking container: Tensors with requires_grad are parameters,
    Modules are children, ``BatchNormState`` objects are buffers."""

    training: bool = True

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, child in self.children():
            yield from child.named_modules(prefix + name + ".")

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, BatchNormState]]:
        for name, value in vars(self).items():
            if isinstance(value, BatchNormState):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_buffers(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


class Linear(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator, std: float = 0.02):
        self.weight = param(trunc_normal(rng, (cin, cout), std))
        self.bias = param(np.zeros(cout))

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, c: int, eps: float = 1e-5):
        self.weight = param(np.ones(c))
        self.bias = param(np.zeros(c))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.weight, self.bias, self.eps)


class BatchNorm(Module):
    def __init__(self, c: int, eps: float = 1e-5, momentum: float = 0.1):
        self.weight = param(np.ones(c))
        self.bias = param(np.zeros(c))
        self.stats = BatchNormState(momentum=momentum)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.batch_norm(x, self.weight, self.bias, self.stats, train=self.training, eps=self.eps)


class Conv2d(Module):
    """Frame-wise k x k convolution with kernel layout (k, k, Cin, Cout)."""

    def __init__(self, cin: int, cout: int, kernel: int, stride: int,
                 rng: np.random.Generator, std: float = 0.02):
        self.weight = param(trunc_normal(rng, (kernel, kernel, cin, cout), std))
        self.bias = param(np.zeros(cout))
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d_framewise(x, self.weight, self.bias, self.stride)


class WindowedRNG:
    """Generator wrapper for window-partitioned batches: one drop decision per
    sample, repeated over that sample's ``windows`` consecutive rows."""

    def __init__(self, rng: np.random.Generator, windows: int):
        self.rng = rng
        self.windows = windows

    def random(self, rows: int) -> np.ndarray:
        if rows % self.windows:
            raise ValueError(f"{rows} rows is not a multiple of {self.windows} windows")
        return np.repeat(self.rng.random(rows // self.windows), self.windows)


def drop_path(x: Tensor, rate: float, training: bool, rng) -> Tensor:
    """Per-sample whole-branch drop with 1/(1-rate) rescaling; identity at eval.

    ``rng`` is a numpy Generator or a ``WindowedRNG``.
    """
    if not training or rate <= 0.0:
        return x
    if rate >= 1.0:
        return x * 0.0
    if rng is None:
        raise ValueError("drop_path in training mode needs a random generator")
    keep = (rng.random(x.shape[0]) >= rate).astype(np.float64) / (1.0 - rate)
    return T.mul(x, Tensor(keep.reshape((-1,) + (1,) * (x.ndim - 1))))
