"""State-space layer parameters, bilinear discretization and kernel materialization."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Tuple, Union

import numpy as np

from ..errors import ArgumentError, NumericalError, ShapeError
from ..tensor import Rng, Tensor, no_grad
from ..tensor import ops
from .hippo import hippo_init

TensorLike = Union[Tensor, np.ndarray, float]


@dataclass
class SsmLayerParams:
    """D single-input single-output systems sharing one state matrix.

    A: [N, N] shared; B, C: [D, N] per channel; log_delta: [D] with
    Delta = exp(log_delta). The feedthrough term is not a parameter; the
    decoder block's skip branch plays that role.
    """
    A: Tensor
    B: Tensor
    C: Tensor
    log_delta: Tensor

    NAMES = ("A", "B", "C", "log_delta")

    @property
    def N(self) -> int:
        return self.A.dims[-1]

    @property
    def D(self) -> int:
        return self.B.dims[0]

    @property
    def delta(self) -> Tensor:
        return ops.exp(self.log_delta)

    @staticmethod
    def init(rng: Rng, channels: int, state_dim: int,
             dt_min: float = 1e-3, dt_max: float = 1e-1) -> Dict[str, np.ndarray]:
        if channels < 1 or state_dim < 1:
            raise ArgumentError(f"Invalid SSM extents D={channels}, N={state_dim}")
        if not 0 < dt_min <= dt_max:
            raise ArgumentError(f"Invalid step range [{dt_min}, {dt_max}]")
        std = 1.0 / np.sqrt(state_dim)
        log_delta = np.log(dt_min) + rng.uniform((channels,)) * (np.log(dt_max) - np.log(dt_min))
        return {
            "A": hippo_init(state_dim),
            "B": rng.normal((channels, state_dim), std),
            "C": rng.normal((channels, state_dim), std),
            "log_delta": log_delta,
        }

    @classmethod
    def from_bound(cls, bound: Mapping[str, Tensor], prefix: str = "") -> "SsmLayerParams":
        params = cls(*(bound[prefix + name] for name in cls.NAMES))
        if params.A.dims != (params.N, params.N):
            raise ShapeError(f"{prefix}A must be square, got {params.A.dims}")
        for field in (params.B, params.C):
            if field.dims != (params.D, params.N):
                raise ShapeError(f"{prefix}B/C must be [D, N], got {field.dims}")
        if params.log_delta.dims != (params.D,):
            raise ShapeError(f"{prefix}log_delta must be [D], got {params.log_delta.dims}")
        return params


@dataclass
class S4Kernel:
    """Row d holds C_d Abar_d^i Bbar_d for i in [0, L)."""
    kbar: Tensor

    @property
    def L(self) -> int:
        return self.kbar.dims[-1]

    @property
    def D(self) -> int:
        return self.kbar.dims[0]


def _as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else ops.constant(value)


def discretize(A: TensorLike, B: TensorLike, delta: TensorLike) -> Tuple[Tensor, Tensor]:
    """Bilinear transform: (I - dA/2) Abar = (I + dA/2), (I - dA/2) Bbar = dB.

    ``delta`` is a scalar (B: [N]) or one step per channel (B: [D, N]); the
    per-channel form returns Abar [D, N, N] and Bbar [D, N]. Both solves use
    the left factor (I - dA/2).
    """
    A, B, delta = _as_tensor(A), _as_tensor(B), _as_tensor(delta)
    n = A.dims[-1]
    if A.dims != (n, n):
        raise ShapeError(f"State matrix must be square, got {A.dims}")
    if B.dims[-1] != n:
        raise ShapeError(f"Input map {B.dims} does not match N={n}")
    if np.any(delta.data <= 0):
        raise ArgumentError("Step size must be positive")

    if delta.ndim == 0:
        if B.ndim != 1:
            raise ShapeError("A scalar step needs a single input vector B")
        scaled_a = ops.mul(delta, A)
        scaled_b = ops.mul(delta, B)
    else:
        channels = delta.dims[0]
        if B.dims != (channels, n):
            raise ShapeError(f"Per-channel steps need B of shape ({channels}, {n}), got {B.dims}")
        scaled_a = ops.mul(ops.reshape(delta, (channels, 1, 1)), A)
        scaled_b = ops.mul(ops.reshape(delta, (channels, 1)), B)

    half = ops.scale(scaled_a, 0.5)
    eye = ops.constant(np.eye(n))
    lhs = ops.sub(eye, half)
    context = f" in discretize (N={n}, delta={np.array2string(delta.data, precision=4)})"
    abar = ops.linear_solve(lhs, ops.add(eye, half), context)
    bbar = ops.linear_solve(lhs, scaled_b, context)
    return abar, bbar


def materialize_kernel(params: SsmLayerParams, L: int) -> S4Kernel:
    """Unroll v_0 = Bbar, v_{i+1} = Abar v_i and read kbar[d][i] = C_d v_i.

    Every step is recorded on the active tape, so A, B, C and log_delta all
    receive gradients through the recursion.
    """
    if L < 1:
        raise ArgumentError(f"Kernel length must be positive, got {L}")
    abar, bbar = discretize(params.A, params.B, params.delta)
    state = bbar
    states = [state]
    for _ in range(L - 1):
        state = ops.matvec(abar, state)
        states.append(state)
    trajectory = ops.stack(states, axis=1)
    c = ops.reshape(params.C, (params.D, 1, params.N))
    kbar = ops.sum(ops.mul(trajectory, c), axis=-1)

    bad = np.argwhere(~np.isfinite(kbar.data))
    if bad.size:
        channel, index = (int(v) for v in bad[0])
        raise NumericalError(f"Non-finite kernel entry at channel {channel}, index {index}")
    return S4Kernel(kbar)


def kernel_rows(params: SsmLayerParams, L: int) -> np.ndarray:
    """Plain array of kernel rows [D, L] for export."""
    with no_grad():
        return materialize_kernel(params, L).kbar.numpy()
