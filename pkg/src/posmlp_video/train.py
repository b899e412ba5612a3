"""Toy-scale training loop: AdamW with decoupled weight decay, warmup + cosine schedule."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import ModelConfig, preset
from .network import PosMLPVideo
from .tasks import SyntheticTask, dataset
from .tensor import Tensor, cross_entropy, no_grad

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=lambda: preset("toy"))
    lr: float = 1e-3
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 4
    batch_size: int = 8
    warmup_epochs: int = 1
    seed: int = 0


class AdamW:
    """Adam with weight decay applied directly to the weights (not the gradient).

    Decay only touches matrices and kernels; norms, biases, dictionaries and
    gating offsets are left alone.
    """

    def __init__(self, named_params: dict[str, Tensor], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = named_params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in named_params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in named_params.items()}
        self.decay = {k: p.ndim >= 2 and not k.endswith(".table") and "unit.weight" not in k
                      for k, p in named_params.items()}

    def step(self, lr: Optional[float] = None) -> None:
        lr = self.lr if lr is None else lr
        self.step_count += 1
        c1 = 1 - self.b1 ** self.step_count
        c2 = 1 - self.b2 ** self.step_count
        for k, p in self.params.items():
            if p.grad is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad * p.grad
            if self.decay[k] and self.weight_decay:
                p.data *= 1 - lr * self.weight_decay
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def lr_at(step: int, total: int, warmup: int, base: float) -> float:
    """Linear warmup to ``base`` then cosine decay to zero."""
    if warmup and step < warmup:
        return base * (step + 1) / warmup
    span = max(total - warmup, 1)
    return 0.5 * base * (1 + math.cos(math.pi * (step - warmup) / span))


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)

    def add(self, epoch: int, split: str, loss: float, top1: float) -> None:
        self.rows.append(dict(epoch=epoch, split=split, loss=loss, top1=top1))

    def last(self, split: str) -> dict:
        return [r for r in self.rows if r["split"] == split][-1]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["epoch", "split", "loss", "top1"])
            w.writeheader()
            w.writerows(self.rows)


def predict(model: PosMLPVideo, clips: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Eval-mode logits, (N, classes)."""
    model.eval()
    out = []
    with no_grad():
        for i in range(0, len(clips), batch_size):
            out.append(model(Tensor(clips[i:i + batch_size])).data)
    return np.concatenate(out)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=-1) == labels))


def evaluate(model: PosMLPVideo, task: SyntheticTask, split: str = "val") -> float:
    """Top-1 accuracy on one center clip per sample."""
    x, y = dataset(task, split)
    return accuracy(predict(model, x), y)


def train(cfg: TrainConfig, task: SyntheticTask,
          data: Optional[dict[str, tuple[np.ndarray, np.ndarray]]] = None) -> tuple[PosMLPVideo, History]:
    """Train a fresh model on ``task``; all randomness flows from ``cfg.seed``."""
    model = PosMLPVideo(cfg.model, seed=cfg.seed)
    params = dict(model.named_parameters())
    opt = AdamW(params, cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay)
    data = data or {s: dataset(task, s) for s in ("train", "val")}
    xtr, ytr = data["train"]
    xva, yva = data["val"]
    rng = np.random.default_rng([cfg.seed, 1])
    steps_per_epoch = math.ceil(len(xtr) / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    warmup = cfg.warmup_epochs * steps_per_epoch
    hist = History()
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(len(xtr))
        losses, hits = [], 0
        for i in range(0, len(xtr), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            opt.zero_grad()
            try:
                logits = model(Tensor(xtr[idx]), rng)
                loss = cross_entropy(logits, ytr[idx])
                loss.backward()
            except FloatingPointError as err:
                raise FloatingPointError(f"training diverged at epoch {epoch}, step {step}: {err}") from err
            opt.step(lr_at(step, total, warmup, cfg.lr))
            step += 1
            losses.append(loss.item() * len(idx))
            hits += int(np.sum(np.argmax(logits.data, axis=-1) == ytr[idx]))
        hist.add(epoch, "train", float(np.sum(losses) / len(xtr)), hits / len(xtr))
        logits = predict(model, xva)
        val_loss = cross_entropy(Tensor(logits), yva).item()
        hist.add(epoch, "val", val_loss, accuracy(logits, yva))
        log.info("epoch %d train %.4f/%.3f val %.4f/%.3f", epoch, hist.rows[-2]["loss"],
                 hist.rows[-2]["top1"], val_loss, hist.rows[-1]["top1"])
    return model, hist
