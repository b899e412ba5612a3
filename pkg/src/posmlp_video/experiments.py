"""Toy-scale ordering study: temporal units see frame order, spatial-only models do not."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .config import preset
from .tasks import SyntheticTask, dataset
from .train import TrainConfig, train

# (task, block variant) pairs; "parallel_v1" has temporal units, "spatial" has none
RUNS = (
    ("direction", "parallel_v1"),
    ("direction", "spatial"),
    ("position", "parallel_v1"),
    ("position", "spatial"),
    ("shuffle-control", "parallel_v1"),
)


@dataclass
class OrderingResult:
    accuracy: dict[tuple[str, str, int], float] = field(default_factory=dict)
    seconds: float = 0.0

    def rows(self) -> list[dict]:
        return [dict(task=t, variant=v, seed=s, val_top1=a) for (t, v, s), a in sorted(self.accuracy.items())]

    def worst(self, task: str, variant: str, best: bool = False) -> float:
        accs = [a for (t, v, _), a in self.accuracy.items() if (t, v) == (task, variant)]
        return max(accs) if best else min(accs)


def ordering_study(seeds=(0, 1, 2), runs=RUNS, epochs: int = 4, batch_size: int = 8, log=None) -> OrderingResult:
    """Train the toy model on each (task, variant, seed) and record final val top-1."""
    out = OrderingResult()
    start = time.perf_counter()
    for seed in seeds:
        cache = {}
        for task_kind, variant in runs:
            task = SyntheticTask(task_kind, seed=seed)
            if task_kind not in cache:
                cache[task_kind] = {s: dataset(task, s) for s in ("train", "val")}
            cfg = TrainConfig(model=preset("toy", block_variant=variant), epochs=epochs,
                              batch_size=batch_size, seed=seed)
            _, hist = train(cfg, task, cache[task_kind])
            acc = hist.last("val")["top1"]
            out.accuracy[(task_kind, variant, seed)] = acc
            if log:
                log(f"seed {seed} {task_kind:<16} {variant:<12} val top1 {acc:.3f}")
    out.seconds = time.perf_counter() - start
    return out
