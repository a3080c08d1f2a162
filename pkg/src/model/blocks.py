"""Multi-scale S4 decoder block: LN -> S4 -> pool -> MLP, plus a pooled linear skip."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional

import numpy as np

from ..errors import ShapeError
from ..s4 import SsmLayerParams, s4_forward
from ..tensor import Rng, Tensor
from ..tensor import ops
from .layers import init_linear, linear, pool

DROPOUT = 0.2


@dataclass
class DecoderBlockParams:
    ln_gamma: Tensor
    ln_beta: Tensor
    s4: SsmLayerParams
    bound: Mapping[str, Tensor]
    prefix: str
    pool_stride: int = 2
    dropout: float = DROPOUT

    @property
    def width(self) -> int:
        return self.ln_gamma.dims[0]

    @property
    def out_width(self) -> int:
        return self.bound[self.prefix + "mlp.weight"].dims[1]

    @staticmethod
    def init(rng: Rng, width: int, state_dim: int, dt_min: float = 1e-3,
             dt_max: float = 1e-1) -> Dict[str, np.ndarray]:
        """Arrays for one block keyed by their names relative to the block prefix."""
        if width < 2 or width % 2:
            raise ShapeError(f"Decoder block width must be even, got {width}")
        arrays = {"ln.gamma": np.ones(width), "ln.beta": np.zeros(width)}
        for name, value in SsmLayerParams.init(rng.child(0), width, state_dim, dt_min, dt_max).items():
            arrays["s4." + name] = value
        for branch, stream in (("mlp", 1), ("skip", 2)):
            for name, value in init_linear(rng.child(stream), width, width // 2).items():
                arrays[f"{branch}.{name}"] = value
        return arrays

    @classmethod
    def from_bound(cls, bound: Mapping[str, Tensor], prefix: str, pool_stride: int = 2,
                   dropout: float = DROPOUT) -> "DecoderBlockParams":
        params = cls(bound[prefix + "ln.gamma"], bound[prefix + "ln.beta"],
                     SsmLayerParams.from_bound(bound, prefix + "s4."),
                     bound, prefix, pool_stride, dropout)
        if params.s4.D != params.width:
            raise ShapeError(f"{prefix}s4 has {params.s4.D} channels, block width is {params.width}")
        if bound[prefix + "skip.weight"].dims != bound[prefix + "mlp.weight"].dims:
            raise ShapeError(f"{prefix}skip and mlp output widths differ")
        return params


def s4_branch(ln_gamma: Tensor, ln_beta: Tensor, s4: SsmLayerParams, x: Tensor) -> Tensor:
    """x_s4 = S4(LN(x))."""
    return s4_forward(s4, ops.layer_norm(x, ln_gamma, ln_beta))


def decoder_block(params: DecoderBlockParams, x: Tensor, rng: Optional[Rng] = None,
                  train: bool = False) -> Tensor:
    """[..., L, D] -> [..., ceil(L/stride), D/2].

    x_mlp = dropout(GELU(Linear(P(x_s4)))), x_skip = Linear(P(x)); returns their sum.
    """
    if x.dims[-1] != params.width:
        raise ShapeError(f"{params.prefix} expects width {params.width}, got {x.dims}")
    x_s4 = s4_branch(params.ln_gamma, params.ln_beta, params.s4, x)
    hidden = ops.gelu(linear(pool(x_s4, params.pool_stride), params.bound, params.prefix + "mlp."))
    x_mlp = ops.dropout(hidden, params.dropout, rng, train)
    x_skip = linear(pool(x, params.pool_stride), params.bound, params.prefix + "skip.")
    return ops.add(x_skip, x_mlp)
