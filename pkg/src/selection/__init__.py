from .mask_generator import MaskGenerator, mask_logits, mask_probs
from .gumbel import (
    SelectionResult,
    kept_count,
    gumbel_topk,
    random_selection,
    full_selection,
    relaxed_selector,
    st_gradient,
    straight_through,
    select_tokens,
    recall,
)
from .momentum import MomentumS4, momentum_update, ema_update
from .s5_block import SelectionOptions, S5Output, select, s5_block_forward

__all__ = [
    "MaskGenerator",
    "mask_logits",
    "mask_probs",
    "SelectionResult",
    "kept_count",
    "gumbel_topk",
    "random_selection",
    "full_selection",
    "relaxed_selector",
    "st_gradient",
    "straight_through",
    "select_tokens",
    "recall",
    "MomentumS4",
    "momentum_update",
    "ema_update",
    "SelectionOptions",
    "S5Output",
    "select",
    "s5_block_forward",
]
