"""Backbone (tokenizer + stacked decoder blocks) and the S5 video classifier."""
from __future__ import annotations

from contextlib import nullcontext
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from ..errors import ShapeError
from ..selection import (MaskGenerator, MomentumS4, SelectionOptions, SelectionResult,
                         s5_block_forward)
from ..tensor import ParameterTable, Rng, Tensor, current_tape
from ..tensor import ops
from .blocks import DROPOUT, DecoderBlockParams, decoder_block
from .layers import init_linear, linear
from .tokenizer import PositionalEncodings, TokenGrid, tokenize

CHANNELS = 3


@dataclass
class ModelDims:
    width: int = 64
    state_dim: int = 16
    strides: Sequence[int] = (2, 2, 2)
    patch: int = 8
    frame_height: int = 32
    frame_width: int = 32
    frames: int = 12
    classes: int = 4
    dropout: float = DROPOUT
    dt_min: float = 1e-3
    dt_max: float = 1e-1

    def __post_init__(self):
        self.strides = tuple(int(s) for s in self.strides)
        if self.frame_height % self.patch or self.frame_width % self.patch:
            raise ShapeError(f"Frame {self.frame_height}x{self.frame_width} not divisible "
                             f"by patch {self.patch}")
        if self.width % (2 ** self.blocks):
            raise ShapeError(f"Width {self.width} cannot halve through {self.blocks} blocks")

    @property
    def blocks(self) -> int:
        return len(self.strides)

    @property
    def patches(self) -> int:
        return (self.frame_height // self.patch) * (self.frame_width // self.patch)

    @property
    def tokens(self) -> int:
        return self.patches * self.frames

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * CHANNELS

    def block_width(self, index: int) -> int:
        return self.width // (2 ** index)

    @property
    def feature_width(self) -> int:
        return self.block_width(self.blocks)

    @classmethod
    def from_config(cls, config, frames: Optional[int] = None) -> "ModelDims":
        return cls(width=config.d_emb, state_dim=config.state_dim, strides=config.stride_list,
                   patch=config.patch, frame_height=config.frame_height,
                   frame_width=config.frame_width,
                   frames=frames if frames is not None else config.model_frames,
                   classes=config.classes, dropout=config.dropout,
                   dt_min=config.dt_min, dt_max=config.dt_max)


def run_blocks(blocks: Sequence[DecoderBlockParams], x: Tensor, rng: Optional[Rng],
               train: bool) -> Tensor:
    for i, block in enumerate(blocks):
        if x.dims[-1] != block.width:
            raise ShapeError(f"Block chain mismatch at {block.prefix}: input width "
                             f"{x.dims[-1]}, block width {block.width}")
        x = decoder_block(block, x, None if rng is None else rng.child(i), train)
    return x


def backbone_forward(blocks: Sequence[DecoderBlockParams], grid: Union[TokenGrid, Tensor],
                     rng: Optional[Rng] = None, train: bool = False) -> Tensor:
    """Decoder blocks then the mean over remaining positions: [..., L, D] -> [..., D_out]."""
    x = grid.tokens if isinstance(grid, TokenGrid) else grid
    return ops.mean(run_blocks(blocks, x, rng, train), axis=-2)


def classify(feature: Tensor, bound: Mapping[str, Tensor], prefix: str = "head.") -> Tensor:
    return linear(feature, bound, prefix)


class Backbone:
    """Tokenizer and decoder stack addressed under one name prefix."""

    def __init__(self, dims: ModelDims, prefix: str = ""):
        self.dims = dims
        self.prefix = prefix

    def block_prefix(self, index: int) -> str:
        return f"{self.prefix}blocks.{index}."

    def init_arrays(self, rng: Rng) -> Dict[str, np.ndarray]:
        dims, p = self.dims, self.prefix
        arrays = {p + "embed." + k: v
                  for k, v in init_linear(rng.child(0), dims.patch_dim, dims.width).items()}
        arrays.update({p + "pos." + k: v for k, v in
                       PositionalEncodings.init(rng.child(1), dims.patches, dims.frames,
                                                dims.width).items()})
        for i in range(dims.blocks):
            block = DecoderBlockParams.init(rng.child(2, i), dims.block_width(i), dims.state_dim,
                                            dims.dt_min, dims.dt_max)
            arrays.update({self.block_prefix(i) + k: v for k, v in block.items()})
        return arrays

    def names(self) -> List[str]:
        return list(self.init_arrays(Rng(0)))

    def block_params(self, bound: Mapping[str, Tensor]) -> List[DecoderBlockParams]:
        return [DecoderBlockParams.from_bound(bound, self.block_prefix(i), stride, self.dims.dropout)
                for i, stride in enumerate(self.dims.strides)]

    def tokens(self, bound: Mapping[str, Tensor], frames: np.ndarray) -> TokenGrid:
        enc = PositionalEncodings.from_bound(bound, self.prefix + "pos.")
        return tokenize(frames, self.dims.patch, bound, enc, self.prefix)

    def forward(self, bound: Mapping[str, Tensor], grid: Union[TokenGrid, Tensor],
                rng: Optional[Rng] = None, train: bool = False) -> Tensor:
        return backbone_forward(self.block_params(bound), grid, rng, train)


@dataclass
class ForwardResult:
    logits: Tensor
    selection: SelectionResult
    features: Tensor


@dataclass
class S5Classifier:
    """S5 block first, plain S4 decoder blocks after it, mean readout and linear head."""
    dims: ModelDims
    options: SelectionOptions = field(default_factory=SelectionOptions)
    gumbel_temp: float = 1.0
    gumbel_eps: float = 1e-10
    m_s4: float = 0.01

    def __post_init__(self):
        self.backbone = Backbone(self.dims)
        self.shadow = MomentumS4(self.m_s4, self.backbone.block_prefix(0), "shadow.")

    def init_params(self, rng: Rng) -> ParameterTable:
        table = ParameterTable(self.backbone.init_arrays(rng))
        table.update(MaskGenerator.init(rng.child(3), self.dims.width), "mask_gen.")
        table.update(init_linear(rng.child(4), self.dims.feature_width, self.dims.classes), "head.")
        for name in self.shadow.names():
            table.add(name, np.zeros_like(table[name.replace("shadow.", self.shadow.main_prefix, 1)]))
        self.shadow.reset(table)
        return table

    def trainable(self, table: ParameterTable) -> List[str]:
        """Everything except the shadow, and the mask generator unless selection is learned."""
        skip = {"shadow."}
        if self.options.selection != "learned":
            skip.add("mask_gen.")
        return [n for n in table if not any(n.startswith(s) for s in skip)]

    def mask_generator(self, bound: Mapping[str, Tensor]) -> MaskGenerator:
        return MaskGenerator.from_bound(bound, "mask_gen.", self.gumbel_temp, self.gumbel_eps)

    def forward(self, bound: Mapping[str, Tensor], frames: np.ndarray, rng: Optional[Rng] = None,
                train: bool = False, options: Optional[SelectionOptions] = None) -> ForwardResult:
        options = options or self.options
        grid = self.backbone.tokens(bound, frames)
        blocks = self.backbone.block_params(bound)
        tape = current_tape()
        with tape.scope("s5_block") if tape is not None else nullcontext():
            first = s5_block_forward(blocks[0], self.shadow, self.mask_generator(bound), grid,
                                     options, rng, train)
        rest = run_blocks(blocks[1:], first.out, None if rng is None else rng.child(2), train)
        features = ops.mean(rest, axis=-2)
        return ForwardResult(classify(features, bound), first.selection, features)
