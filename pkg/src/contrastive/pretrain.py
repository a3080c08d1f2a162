"""One LSMCL optimization step and the hand-off of pretrained weights."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from loguru import logger

from ..errors import ArgumentError, CheckpointError
from ..model.network import S5Classifier
from ..selection.momentum import ema_update
from ..tensor import GradTape, ParameterTable, Rng, no_grad
from ..tensor import ops
from .clips import ClipBatch
from .heads import KEY, QUERY, ContrastiveHeads
from .loss import RHO, alignment, symmetric_info_nce

M_KEY = 0.99


@dataclass
class LsmclStepResult:
    loss: float
    positive: float
    negative: float
    peak_bytes: int


class LsmclModel:
    """Query encoder (trained) and momentum key encoder sharing one parameter table."""

    def __init__(self, heads: ContrastiveHeads, rho: float = RHO, m_key: float = M_KEY):
        if rho <= 0:
            raise ArgumentError(f"Temperature must be positive, got {rho}")
        self.heads = heads
        self.rho = rho
        self.m_key = m_key

    def init_params(self, rng: Rng) -> ParameterTable:
        table = ParameterTable(self.heads.init_arrays(rng))
        for query_name, key_name in self.heads.key_pairs(list(table)):
            table.add(key_name, table[query_name].copy())
        return table

    def trainable(self, table: ParameterTable) -> List[str]:
        return table.names(QUERY)

    def key_pairs(self, table: ParameterTable):
        return self.heads.key_pairs(table.names(QUERY))


def lsmcl_step(model: LsmclModel, table: ParameterTable, optimizer, batch: ClipBatch,
               rng: Optional[Rng] = None) -> LsmclStepResult:
    """Symmetrized InfoNCE between masked short and long clips, then the key EMA.

    ``optimizer`` is anything with ``step(table, grads)``.
    """
    if len(batch) < 2:
        raise ArgumentError("LSMCL needs at least two clip pairs per batch")
    heads = model.heads
    with GradTape() as tape:
        bound = tape.bind(table, model.trainable(table))
        queries = {}
        for clip, frames, mask in (("short", batch.short_frames, batch.mask_short),
                                   ("long", batch.long_frames, batch.mask_long)):
            with tape.scope("query"):
                z = heads.encode(bound, QUERY, frames, mask,
                                 None if rng is None else rng.child(len(queries)), True)
                queries[clip] = ops.l2_normalize(heads.predict(bound, z))
        keys = {}
        with no_grad():
            for clip, frames, mask in (("short", batch.short_frames, batch.mask_short),
                                       ("long", batch.long_frames, batch.mask_long)):
                keys[clip] = ops.l2_normalize(heads.encode(bound, KEY, frames, mask, None, False))
        loss = symmetric_info_nce(queries["short"], keys["long"], queries["long"], keys["short"],
                                  model.rho)
        grads = tape.backward(loss)
        peak = tape.peak_bytes

    optimizer.step(table, grads)
    ema_update(table, model.m_key, model.key_pairs(table))

    positive, negative = alignment(
        np.concatenate([queries["short"].data, queries["long"].data]),
        np.concatenate([keys["long"].data, keys["short"].data]),
    )
    return LsmclStepResult(loss.item(), positive, negative, peak)


def transfer_init(pretrained: ParameterTable, classifier: S5Classifier,
                  table: ParameterTable) -> None:
    """Copy the query backbone into the classifier; heads are dropped, the shadow re-synced."""
    names = classifier.backbone.names()
    table.load_matching(pretrained, names, src_prefix=QUERY, dst_prefix="", error=CheckpointError)
    classifier.shadow.reset(table)
    logger.info(f"Initialized {len(names)} backbone parameters from pretraining")
