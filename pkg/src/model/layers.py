"""Affine layers and sequence pooling."""
from __future__ import annotations

from typing import Dict, Mapping

import numpy as np

from ..errors import ArgumentError, ShapeError
from ..tensor import Rng, Tensor
from ..tensor import ops


def init_linear(rng: Rng, fan_in: int, fan_out: int, bias: bool = True) -> Dict[str, np.ndarray]:
    """Weights uniform in +-1/sqrt(fan_in), zero bias; weight layout is [in, out]."""
    bound = 1.0 / np.sqrt(fan_in)
    arrays = {"weight": (2.0 * rng.uniform((fan_in, fan_out)) - 1.0) * bound}
    if bias:
        arrays["bias"] = np.zeros(fan_out)
    return arrays


def linear(x: Tensor, bound: Mapping[str, Tensor], prefix: str) -> Tensor:
    weight = bound[prefix + "weight"]
    if x.dims[-1] != weight.dims[0]:
        raise ShapeError(f"{prefix}weight expects width {weight.dims[0]}, got input {x.dims}")
    if x.ndim == 1:
        out = ops.reshape(ops.matmul(ops.reshape(x, (1, -1)), weight), (weight.dims[1],))
    else:
        out = ops.matmul(x, weight)
    bias = bound.get(prefix + "bias")
    return out if bias is None else ops.add(out, bias)


def pool_matrix(length: int, stride: int) -> np.ndarray:
    """[ceil(L/stride), L] averaging matrix; the tail group averages its actual size."""
    if stride < 1:
        raise ArgumentError(f"Pool stride must be positive, got {stride}")
    groups = -(-length // stride)
    matrix = np.zeros((groups, length))
    for g in range(groups):
        lo, hi = g * stride, min(length, (g + 1) * stride)
        matrix[g, lo:hi] = 1.0 / (hi - lo)
    return matrix


def pool(x: Tensor, stride: int) -> Tensor:
    """Non-overlapping mean over consecutive positions of ``x`` [..., L, D]."""
    if x.ndim < 2:
        raise ShapeError(f"pool expects [..., L, D], got {x.dims}")
    matrix = pool_matrix(x.dims[-2], stride)
    if stride == 1:
        return x
    return ops.matmul(ops.constant(matrix), x)
