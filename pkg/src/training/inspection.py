"""CSV exports of learned SSM kernels and token-selection masks."""
from __future__ import annotations

from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from ..data import atomic_write
from ..errors import ArgumentError
from ..s4 import SsmLayerParams, kernel_rows
from ..tensor import ParameterTable, constants
from .trainer import Trainer


def _write(frame: pd.DataFrame, path: Union[str, Path, None]) -> pd.DataFrame:
    if path is not None:
        atomic_write(path, frame.to_csv(index=False).encode("utf-8"))
    return frame


def inspect_kernel(table: ParameterTable, blocks: int, layer: int, length: int,
                   path: Union[str, Path, None] = None) -> pd.DataFrame:
    """Kernel of one decoder block: one row per channel, columns ``k0 .. k{length-1}``."""
    if not 0 <= layer < blocks:
        raise ArgumentError(f"Layer index must be in [0, {blocks}), got {layer}")
    if length < 1:
        raise ArgumentError(f"Kernel length must be positive, got {length}")
    params = SsmLayerParams.from_bound(constants(table), f"blocks.{layer}.s4.")
    kbar = kernel_rows(params, length)
    frame = pd.DataFrame(kbar, columns=[f"k{lag}" for lag in range(length)])
    frame.insert(0, "channel", np.arange(kbar.shape[0]))
    return _write(frame, path)


def inspect_mask(trainer: Trainer, split: str = "test", count: Optional[int] = None,
                 path: Union[str, Path, None] = None) -> pd.DataFrame:
    """Selection probability, kept flag and planted flag of every token of ``count`` samples."""
    data = trainer.dataset.split(split)
    count = len(data) if count is None else min(count, len(data))
    frames, labels, planted = data.batch(np.arange(count), trainer.frames)
    result = trainer.classifier.forward(constants(trainer.table), frames,
                                        trainer.rng.child(6), False, trainer.eval_options())
    sel = result.selection
    patches = trainer.classifier.dims.patches
    rows = []
    for i in range(count):
        kept = set(sel.indices[i].tolist())
        informative = set(int(r) for r in planted[i])
        for row in range(sel.probs.shape[-1]):
            t, s = divmod(row, patches)
            rows.append((i, int(labels[i]), row, t, s, float(sel.probs[i, row]),
                         row in kept, row in informative))
    frame = pd.DataFrame(rows, columns=["sample", "label", "token", "frame", "patch",
                                        "prob", "kept", "planted"])
    return _write(frame, path)
