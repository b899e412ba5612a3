"""Dump every learned token-relation matrix as CSV plus a PGM heatmap."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import rpe
from .network import PosMLPVideo
from .units import GatingUnit


def relation_matrices(model: PosMLPVideo) -> dict[str, np.ndarray]:
    """``<unit path>.group<i>`` -> (N, N) relation matrix at the unit's full window.

    Positional units give one matrix per group; dense units give their single
    weight matrix under ``group0``.
    """
    out = {}
    for name, m in model.named_modules():
        if not isinstance(m, GatingUnit):
            continue
        r = m.relation(m.spec.extents).data
        for i in range(r.shape[0]):
            out[f"{name}.group{i}"] = r[i]
    return out


def export_relations(model: PosMLPVideo, out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise OSError(f"cannot create export directory {out}: {err}") from err
    units = {n: m for n, m in model.named_modules() if isinstance(m, GatingUnit)}
    entries = []
    for key, mat in relation_matrices(model).items():
        unit_name = key.rsplit(".group", 1)[0]
        spec = units[unit_name].spec
        stem = key.replace(".", "_")
        rpe.write_csv(mat, out / f"{stem}.csv")
        rpe.write_pgm(mat, out / f"{stem}.pgm")
        entries.append(dict(name=key, kind=spec.kind, extents=list(spec.extents),
                            tokens=int(mat.shape[0]), csv=f"{stem}.csv", pgm=f"{stem}.pgm"))
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"config": model.config.to_dict(), "matrices": entries}, indent=2))
    return manifest

