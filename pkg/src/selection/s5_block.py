"""First decoder block with learned token selection."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from scipy.special import softmax

from ..errors import ArgumentError
from ..model.blocks import DecoderBlockParams, decoder_block, s4_branch
from ..model.tokenizer import TokenGrid
from ..tensor import Rng, Tensor, no_grad
from .gumbel import (SelectionResult, full_selection, gumbel_topk, kept_count,
                     random_selection, relaxed_selector, select_tokens, straight_through)
from .mask_generator import MaskGenerator, mask_logits
from .momentum import MomentumS4

SELECTION_MODES = ("learned", "random", "none")
MASK_INPUTS = ("s4", "tokens")


@dataclass
class SelectionOptions:
    eta: float = 0.5
    selection: str = "learned"
    mask_input: str = "s4"
    deterministic_topk: bool = False

    def __post_init__(self):
        if self.selection not in SELECTION_MODES:
            raise ArgumentError(f"Unknown selection mode {self.selection!r}")
        if self.mask_input not in MASK_INPUTS:
            raise ArgumentError(f"Unknown mask input {self.mask_input!r}")
        if not 0.0 <= self.eta < 1.0:
            raise ArgumentError(f"Masking ratio must be in [0, 1), got {self.eta}")


@dataclass
class S5Output:
    out: Tensor
    selection: SelectionResult

    @property
    def kept(self) -> int:
        return self.selection.K


def _mask_features(shadow: MomentumS4, grid: TokenGrid, bound, source: str) -> Tensor:
    with no_grad():
        tokens = grid.tokens.detach()
        if source == "tokens":
            return tokens
        gamma, beta, s4 = shadow.bound(bound)
        return s4_branch(gamma, beta, s4, tokens).detach()


def select(grid: TokenGrid, options: SelectionOptions, rng: Optional[Rng],
           shadow: Optional[MomentumS4] = None, mg: Optional[MaskGenerator] = None,
           bound=None) -> SelectionResult:
    """Pick K = kept_count(eta, ST) tokens per sample.

    Learned selection scores shadow-S4 features (or raw tokens) with the mask
    generator, samples Gumbel top-K and attaches straight-through selectors.
    """
    batch = grid.tokens.dims[:-2]
    tokens = grid.length
    K = kept_count(options.eta, tokens)
    if options.selection == "none":
        return full_selection(batch, tokens)
    if options.selection == "random":
        return random_selection(batch, tokens, K, rng.child(0))

    if shadow is None or mg is None or bound is None:
        raise ArgumentError("Learned selection needs the shadow model and mask generator")
    features = _mask_features(shadow, grid, bound, options.mask_input)
    logits = mask_logits(mg, features)
    probs = softmax(logits.data, axis=-1)
    sel = gumbel_topk(probs, K, None if rng is None else rng.child(0), mg.eps,
                      deterministic=options.deterministic_topk)
    soft = relaxed_selector(logits, sel.noise, mg.gumbel_temp)
    sel.selectors = straight_through(soft, sel.indices)
    return sel


def s5_block_forward(block: DecoderBlockParams, shadow: Optional[MomentumS4],
                     mg: Optional[MaskGenerator], grid: TokenGrid, options: SelectionOptions,
                     rng: Optional[Rng], train: bool = False) -> S5Output:
    sel = select(grid, options, rng, shadow, mg, block.bound)
    kept = select_tokens(grid.tokens, sel)
    out = decoder_block(block, kept, None if rng is None else rng.child(1), train)
    return S5Output(out, sel)
