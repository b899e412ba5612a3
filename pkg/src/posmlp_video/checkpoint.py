"""Checkpoints: a flat ``.npz`` map from parameter path to a float64 array.

Batch-norm running statistics are stored as ``<path>.running_mean`` and
``<path>.running_var``; the model config rides along as JSON under
``__config__``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ModelConfig
from .network import PosMLPVideo

CONFIG_KEY = "__config__"


def model_arrays(model: PosMLPVideo, image_mode: bool = False) -> dict[str, np.ndarray]:
    """Everything a checkpoint holds.  ``image_mode`` drops temporal-unit
    parameters, which image pretraining never touches."""
    skip = model.temporal_parameter_names() if image_mode else set()
    out = {k: np.array(p.data, dtype=np.float64) for k, p in model.named_parameters() if k not in skip}
    for k, st in model.named_buffers():
        if st.running_mean is not None:
            out[k + ".running_mean"] = np.array(st.running_mean)
            out[k + ".running_var"] = np.array(st.running_var)
    return out


def save_checkpoint(model: PosMLPVideo, path, image_mode: bool = False) -> Path:
    path = Path(path)
    arrays = model_arrays(model, image_mode)
    cfg = np.frombuffer(model.config.to_json().encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **{CONFIG_KEY: cfg}, **arrays)
    return path


def read_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    with np.load(Path(path)) as z:
        arrays = {k: z[k] for k in z.files}
    raw = arrays.pop(CONFIG_KEY, None)
    if raw is None:
        raise ValueError(f"{path}: no embedded model config")
    return ModelConfig.from_dict(json.loads(raw.tobytes().decode("utf-8"))), arrays


def load_arrays(model: PosMLPVideo, arrays: dict[str, np.ndarray], allow_missing: bool = False) -> list[str]:
    """Copy ``arrays`` into ``model`` in place; returns the names left at their
    current values.  Shapes must match exactly and unknown names are errors."""
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    expected = set(params)
    for k, st in buffers.items():
        expected |= {k + ".running_mean", k + ".running_var"}
    unknown = sorted(set(arrays) - expected)
    if unknown:
        raise KeyError(f"checkpoint entries not in model: {unknown[:5]}")
    missing = sorted(k for k in params if k not in arrays)
    if missing and not allow_missing:
        raise KeyError(f"checkpoint lacks {len(missing)} parameters, e.g. {missing[:3]}")
    for k, v in arrays.items():
        if k in params:
            if params[k].shape != v.shape:
                raise ValueError(f"{k}: checkpoint shape {v.shape} != model shape {params[k].shape}")
            params[k].data = np.array(v, dtype=np.float64)
    for k, st in buffers.items():
        mean, var = arrays.get(k + ".running_mean"), arrays.get(k + ".running_var")
        if mean is not None and var is not None:
            st.running_mean, st.running_var = np.array(mean), np.array(var)
    return missing


def load_checkpoint(path, allow_missing: bool = False, config: Optional[ModelConfig] = None,
                    seed: int = 0) -> PosMLPVideo:
    """Build a model from ``path``.  With ``config`` the model is built from
    that config instead (e.g. a video model receiving image-pretrained
    weights); parameters absent from the file keep their seeded init."""
    saved, arrays = read_checkpoint(path)
    model = PosMLPVideo(config or saved, seed=seed)
    load_arrays(model, arrays, allow_missing)
    return model
