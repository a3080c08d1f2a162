"""S4 layer application: FFT path for training, recurrent scan as oracle."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from ..errors import ShapeError
from ..tensor import Tensor, no_grad
from .conv import fft_conv
from .kernel import SsmLayerParams, discretize, materialize_kernel


def s4_forward(params: SsmLayerParams, x: Tensor) -> Tensor:
    """Apply the layer to ``x`` [..., L, D]; output has the same extents."""
    if x.ndim < 2 or x.dims[-1] != params.D:
        raise ShapeError(f"S4 layer has {params.D} channels, input dims {x.dims}")
    kernel = materialize_kernel(params, x.dims[-2])
    return fft_conv(x, kernel)


@dataclass
class SsmState:
    """Latent state per channel, [..., D, N]."""
    x: np.ndarray

    @classmethod
    def zeros(cls, batch: tuple, channels: int, state_dim: int) -> "SsmState":
        return cls(np.zeros(batch + (channels, state_dim)))


def recurrent_scan(params: SsmLayerParams, u: Union[Tensor, np.ndarray],
                   state: Optional[SsmState] = None) -> Tensor:
    """Sequential x_k = Abar x_{k-1} + Bbar u_k, y_k = C x_k from x_{-1} = 0.

    Forward only; nothing is recorded on the tape.
    """
    values = u.data if isinstance(u, Tensor) else np.asarray(u, dtype=np.float64)
    if values.ndim < 2 or values.shape[-1] != params.D:
        raise ShapeError(f"S4 layer has {params.D} channels, input dims {values.shape}")
    with no_grad():
        abar, bbar = discretize(params.A, params.B, params.delta)
    abar, bbar, c = abar.data, bbar.data, params.C.data

    batch = values.shape[:-2]
    state = state or SsmState.zeros(batch, params.D, params.N)
    x = state.x
    out = np.empty_like(values)
    for k in range(values.shape[-2]):
        x = np.einsum("dij,...dj->...di", abar, x) + bbar * values[..., k, :, None]
        out[..., k, :] = np.sum(c * x, axis=-1)
    state.x = x
    return Tensor(out)
