from .clips import ClipPair, ClipBatch, sample_long_short, random_mask, random_mask_indices, make_clip_batch
from .loss import info_nce, symmetric_info_nce, alignment
from .heads import ContrastiveHeads, init_mlp, mlp, QUERY, KEY
from .pretrain import LsmclModel, LsmclStepResult, lsmcl_step, transfer_init

__all__ = [
    "ClipPair",
    "ClipBatch",
    "sample_long_short",
    "random_mask",
    "random_mask_indices",
    "make_clip_batch",
    "info_nce",
    "symmetric_info_nce",
    "alignment",
    "ContrastiveHeads",
    "init_mlp",
    "mlp",
    "QUERY",
    "KEY",
    "LsmclModel",
    "LsmclStepResult",
    "lsmcl_step",
    "transfer_init",
]
