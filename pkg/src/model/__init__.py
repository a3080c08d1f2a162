# network.py depends on src.selection, which builds on these modules; import it directly
from .layers import init_linear, linear, pool, pool_matrix
from .tokenizer import TokenGrid, PositionalEncodings, patchify, tokenize
from .blocks import DecoderBlockParams, decoder_block, s4_branch

__all__ = [
    "init_linear",
    "linear",
    "pool",
    "pool_matrix",
    "TokenGrid",
    "PositionalEncodings",
    "patchify",
    "tokenize",
    "DecoderBlockParams",
    "decoder_block",
    "s4_branch",
]
