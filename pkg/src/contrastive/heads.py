"""Query/key encoders: backbone + projection MLP (+ prediction MLP on the query side)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from ..model.layers import init_linear, linear
from ..model.network import Backbone, ModelDims
from ..model.tokenizer import TokenGrid
from ..tensor import Rng, Tensor
from ..tensor import ops

QUERY = "query."
KEY = "key."


def init_mlp(rng: Rng, widths: Sequence[int]) -> Dict[str, np.ndarray]:
    """Linear + batch-norm per layer, keyed ``{i}.weight``, ``{i}.bias``, ``{i}.bn.gamma``..."""
    arrays = {}
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        for name, value in init_linear(rng.child(i), fan_in, fan_out).items():
            arrays[f"{i}.{name}"] = value
        arrays[f"{i}.bn.gamma"] = np.ones(fan_out)
        arrays[f"{i}.bn.beta"] = np.zeros(fan_out)
    return arrays


def mlp(x: Tensor, bound: Mapping[str, Tensor], prefix: str, layers: int) -> Tensor:
    """Linear -> BN (-> ReLU except after the last layer). BN uses batch statistics."""
    for i in range(layers):
        p = f"{prefix}{i}."
        x = ops.batch_norm(linear(x, bound, p), bound[p + "bn.gamma"], bound[p + "bn.beta"])
        if i < layers - 1:
            x = ops.relu(x)
    return x


@dataclass
class ContrastiveHeads:
    dims: ModelDims
    hidden: int = 64
    out: int = 32
    projection_layers: int = 3
    prediction_layers: int = 2

    @property
    def projection_widths(self) -> List[int]:
        return [self.dims.feature_width] + [self.hidden] * (self.projection_layers - 1) + [self.out]

    @property
    def prediction_widths(self) -> List[int]:
        return [self.out] + [self.hidden] * (self.prediction_layers - 1) + [self.out]

    def backbone(self, side: str) -> Backbone:
        return Backbone(self.dims, side)

    def init_arrays(self, rng: Rng) -> Dict[str, np.ndarray]:
        """Query side only; the key side starts as a copy (see :meth:`key_pairs`)."""
        arrays = self.backbone(QUERY).init_arrays(rng.child(0))
        arrays.update({QUERY + "proj." + k: v
                       for k, v in init_mlp(rng.child(1), self.projection_widths).items()})
        arrays.update({QUERY + "pred." + k: v
                       for k, v in init_mlp(rng.child(2), self.prediction_widths).items()})
        return arrays

    def key_pairs(self, names: Sequence[str]) -> List[tuple]:
        """(query name, key name) for every backbone and projection parameter."""
        shared = [n for n in names if n.startswith(QUERY) and not n.startswith(QUERY + "pred.")]
        return [(n, KEY + n[len(QUERY):]) for n in shared]

    def encode(self, bound: Mapping[str, Tensor], side: str, frames: np.ndarray,
               mask: Optional[np.ndarray], rng: Optional[Rng], train: bool) -> Tensor:
        """Backbone over the kept tokens, then the projection head: [B, out]."""
        backbone = self.backbone(side)
        grid = backbone.tokens(bound, frames)
        if mask is not None:
            grid = TokenGrid(ops.gather_rows(grid.tokens, mask), grid.S, grid.T)
        features = backbone.forward(bound, grid, rng, train)
        return mlp(features, bound, side + "proj.", self.projection_layers)

    def predict(self, bound: Mapping[str, Tensor], z: Tensor) -> Tensor:
        return mlp(z, bound, QUERY + "pred.", self.prediction_layers)
