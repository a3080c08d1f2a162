"""Linear per-token scorer producing the token distribution p(c | x)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping

import numpy as np

from ..errors import ArgumentError, ShapeError
from ..model.layers import init_linear
from ..tensor import Rng, Tensor
from ..tensor import ops

GUMBEL_EPS = 1e-10


@dataclass
class MaskGenerator:
    weight: Tensor
    gumbel_temp: float = 1.0
    eps: float = GUMBEL_EPS

    def __post_init__(self):
        if self.gumbel_temp <= 0:
            raise ArgumentError(f"Gumbel temperature must be positive, got {self.gumbel_temp}")

    @staticmethod
    def init(rng: Rng, width: int) -> Dict[str, np.ndarray]:
        return init_linear(rng, width, 1, bias=False)

    @classmethod
    def from_bound(cls, bound: Mapping[str, Tensor], prefix: str = "mask_gen.",
                   gumbel_temp: float = 1.0, eps: float = GUMBEL_EPS) -> "MaskGenerator":
        return cls(bound[prefix + "weight"], gumbel_temp, eps)


def mask_logits(mg: MaskGenerator, x: Tensor) -> Tensor:
    """One score per token: [..., ST, D] -> [..., ST]."""
    if x.ndim < 2 or x.dims[-1] != mg.weight.dims[0]:
        raise ShapeError(f"Mask generator expects width {mg.weight.dims[0]}, got {x.dims}")
    scores = ops.matmul(x, mg.weight)
    return ops.reshape(scores, x.dims[:-1])


def mask_probs(mg: MaskGenerator, x: Tensor) -> Tensor:
    return ops.softmax(mask_logits(mg, x), axis=-1)
