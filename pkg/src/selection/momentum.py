"""Exponential-moving-average copies of trainable parameters."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence, Tuple

from loguru import logger

from ..errors import ArgumentError, CheckpointError
from ..s4 import SsmLayerParams
from ..tensor import ParameterTable, Tensor

SHADOW_NAMES = ("ln.gamma", "ln.beta") + tuple("s4." + n for n in SsmLayerParams.NAMES)


def ema_update(table: ParameterTable, m: float, pairs: Sequence[Tuple[str, str]]) -> None:
    """``table[dst] <- m * table[dst] + (1 - m) * table[src]`` for every (src, dst) pair."""
    if not 0.0 <= m <= 1.0:
        raise ArgumentError(f"Momentum coefficient must be in [0, 1], got {m}")
    for src, dst in pairs:
        if src not in table or dst not in table:
            raise CheckpointError(f"Momentum pair {src} -> {dst} not in parameter table")
        if table[src].shape != table[dst].shape:
            raise CheckpointError(f"Momentum shape mismatch {src} {table[src].shape} vs "
                                  f"{dst} {table[dst].shape}")
        table[dst] = m * table[dst] + (1.0 - m) * table[src]


@dataclass
class MomentumS4:
    """Shadow LN + S4 of the first block, never trained directly."""
    m: float = 0.01
    main_prefix: str = "blocks.0."
    shadow_prefix: str = "shadow."

    def pairs(self) -> list:
        return [(self.main_prefix + name, self.shadow_prefix + name) for name in SHADOW_NAMES]

    def names(self) -> list:
        return [self.shadow_prefix + name for name in SHADOW_NAMES]

    def reset(self, table: ParameterTable) -> None:
        """Copy the main block's LN + S4 into the shadow."""
        table.load_matching(table, SHADOW_NAMES, self.main_prefix, self.shadow_prefix)

    def bound(self, bound: Mapping[str, Tensor]) -> Tuple[Tensor, Tensor, SsmLayerParams]:
        prefix = self.shadow_prefix
        return (bound[prefix + "ln.gamma"], bound[prefix + "ln.beta"],
                SsmLayerParams.from_bound(bound, prefix + "s4."))


def momentum_update(shadow: MomentumS4, table: ParameterTable) -> None:
    ema_update(table, shadow.m, shadow.pairs())
    logger.trace(f"shadow S4 updated with m={shadow.m}")
