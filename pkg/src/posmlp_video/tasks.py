"""Synthetic order-sensitive video classification tasks.

Samples come in antithetic pairs so both classes are exactly balanced:

* ``direction``: index 2k is a dot moving left-to-right (label 0), index 2k+1
  is the same clip played backwards (label 1).  The two clips contain the same
  frames, so only temporal order separates them.
* ``position``: a static dot in the left half (label 0) and its horizontal
  mirror image in the right half (label 1).
* ``shuffle-control``: the direction pair with each clip's frames randomly
  permuted; labels are kept, so no class signal remains.

Every sample is a pure function of (kind, seed, split, index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("direction", "position", "shuffle-control")
_SPLITS = {"train": 0, "val": 1, "test": 2}


@dataclass(frozen=True)
class SyntheticTask:
    kind: str = "direction"
    frames: int = 8
    size: int = 32
    n_train: int = 512
    n_val: int = 128
    seed: int = 0
    dot: int = 4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; expected one of {KINDS}")
        if self.frames < 2 or self.size < 2 * self.dot + self.frames:
            raise ValueError("clip too small for a moving dot")

    def split_size(self, split: str) -> int:
        return {"train": self.n_train, "val": self.n_val}.get(split, self.n_val)


def _stream(task: SyntheticTask, split: str, pair: int) -> np.random.Generator:
    return np.random.default_rng([task.seed, KINDS.index(task.kind), _SPLITS[split], pair])


def _paint(clip: np.ndarray, t: int, row: int, col: int, size: int, color: np.ndarray) -> None:
    clip[t, row:row + size, col:col + size, :] = color


def _moving_clip(task: SyntheticTask, rng: np.random.Generator) -> tuple[np.ndarray, list[int]]:
    t, s, d = task.frames, task.size, task.dot
    max_speed = max(1, (s - d) // (t - 1))
    speed = int(rng.integers(1, max_speed + 1))
    travel = speed * (t - 1)
    col0 = int(rng.integers(0, s - d - travel + 1))
    row = int(rng.integers(0, s - d + 1))
    color = rng.uniform(0.5, 1.0, size=3)
    clip = np.zeros((t, s, s, 3))
    cols = [col0 + speed * i for i in range(t)]
    for i, c in enumerate(cols):
        _paint(clip, i, row, c, d, color)
    return clip, cols


def generate(task: SyntheticTask, index: int, split: str = "train") -> tuple[np.ndarray, int]:
    """Clip of shape (T, H, W, 3) in [0, 1] and its integer label."""
    if index < 0 or index >= task.split_size(split):
        raise IndexError(f"index {index} outside {split} split of size {task.split_size(split)}")
    pair, label = divmod(index, 2)
    rng = _stream(task, split, pair)
    if task.kind == "position":
        t, s, d = task.frames, task.size, task.dot
        row = int(rng.integers(0, s - d + 1))
        col = int(rng.integers(0, s // 2 - d + 1))
        color = rng.uniform(0.5, 1.0, size=3)
        clip = np.zeros((t, s, s, 3))
        for i in range(t):
            _paint(clip, i, row, col, d, color)
        if label:
            clip = clip[:, :, ::-1, :]
        return np.ascontiguousarray(clip), label

    clip, _ = _moving_clip(task, rng)
    if label:
        clip = clip[::-1]
    if task.kind == "shuffle-control":
        perms = [rng.permutation(task.frames) for _ in range(2)]
        clip = clip[perms[label]]
    return np.ascontiguousarray(clip), label


def dataset(task: SyntheticTask, split: str) -> tuple[np.ndarray, np.ndarray]:
    n = task.split_size(split)
    clips, labels = zip(*(generate(task, i, split) for i in range(n)))
    return np.stack(clips), np.array(labels, dtype=np.int64)
