"""Causal convolution by zero-padded FFT, with the direct sum as its oracle."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from ..tensor import Tensor
from ..tensor.tensor import make_result
from .kernel import S4Kernel


def next_power_of_two(n: int) -> int:
    size = 1
    while size < n:
        size <<= 1
    return size


def _causal_conv(u: np.ndarray, k: np.ndarray) -> np.ndarray:
    """y[..., t, d] = sum_{i <= t} k[..., i, d] u[..., t - i, d]; both [..., L, D]."""
    length = u.shape[-2]
    size = next_power_of_two(2 * length - 1)
    spectrum = np.fft.fft(u, n=size, axis=-2) * np.fft.fft(k, n=size, axis=-2)
    return np.fft.ifft(spectrum, axis=-2)[..., :length, :].real


def _flip(a: np.ndarray) -> np.ndarray:
    return np.flip(a, axis=-2)


def fft_conv(u: Tensor, kernel: S4Kernel) -> Tensor:
    """Per-channel causal convolution of ``u`` [..., L, D] with ``kernel.kbar`` [D, L].

    Both sides are zero-padded to the next power of two >= 2L-1 so the circular
    product equals the linear one. The backward rule is correlation, computed as
    a convolution of the time-reversed upstream gradient.
    """
    if u.ndim < 2:
        raise ShapeError(f"fft_conv expects [..., L, D], got {u.dims}")
    length, channels = u.dims[-2:]
    kbar = kernel.kbar
    if kbar.dims != (channels, length):
        raise ShapeError(f"Kernel {kbar.dims} does not match input length {length} "
                         f"and {channels} channels")
    k = kbar.data.T
    out = _causal_conv(u.data, k)

    def backward(g):
        reversed_g = _flip(g)
        gu = _flip(_causal_conv(reversed_g, k))
        gk = _flip(_causal_conv(reversed_g, u.data))
        gk = gk.reshape(-1, length, channels).sum(axis=0)
        return gu, gk.T

    return make_result("fft_conv", (u, kbar), out, backward)


def direct_conv(u: np.ndarray, kbar: np.ndarray) -> np.ndarray:
    """O(L^2) causal convolution; ``u`` [..., L, D], ``kbar`` [D, L]."""
    u = np.asarray(u, dtype=np.float64)
    length = u.shape[-2]
    if kbar.shape != (u.shape[-1], length):
        raise ShapeError(f"Kernel {kbar.shape} does not match input {u.shape}")
    out = np.zeros_like(u)
    for t in range(length):
        # kbar[:, i] pairs with u[t - i]
        window = u[..., t::-1, :]
        out[..., t, :] = np.sum(window * kbar[:, :t + 1].T, axis=-2)
    return out
