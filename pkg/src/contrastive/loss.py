"""In-batch InfoNCE and alignment statistics."""
from __future__ import annotations

from typing import Tuple

import numpy as np

from ..errors import ArgumentError, ShapeError
from ..tensor import Tensor
from ..tensor import ops

RHO = 0.2


def info_nce(q: Tensor, k: Tensor, rho: float = RHO) -> Tensor:
    """Mean over i of -log softmax_j(q_i . k_j / rho)[i]; keys carry no gradient."""
    if q.ndim != 2 or q.dims != k.dims:
        raise ShapeError(f"info_nce expects matching [B, E] inputs, got {q.dims} and {k.dims}")
    if q.dims[0] < 2:
        raise ArgumentError("info_nce needs at least two samples for in-batch negatives")
    if rho <= 0:
        raise ArgumentError(f"Temperature must be positive, got {rho}")
    logits = ops.scale(ops.matmul(q, ops.transpose(k.detach())), 1.0 / rho)
    return ops.cross_entropy(logits, np.arange(q.dims[0]))


def symmetric_info_nce(q_short: Tensor, k_long: Tensor, q_long: Tensor, k_short: Tensor,
                       rho: float = RHO) -> Tensor:
    return ops.scale(ops.add(info_nce(q_short, k_long, rho), info_nce(q_long, k_short, rho)), 0.5)


def alignment(q: np.ndarray, k: np.ndarray) -> Tuple[float, float]:
    """(mean positive cosine, mean negative cosine) over a batch."""
    q = q / np.maximum(np.linalg.norm(q, axis=-1, keepdims=True), 1e-12)
    k = k / np.maximum(np.linalg.norm(k, axis=-1, keepdims=True), 1e-12)
    sims = q @ k.T
    batch = sims.shape[0]
    positive = float(np.mean(np.diag(sims)))
    negative = float((sims.sum() - np.trace(sims)) / max(1, batch * (batch - 1)))
    return positive, negative
