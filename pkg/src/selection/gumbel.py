"""Gumbel top-K selection with straight-through selectors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from ..errors import ArgumentError, ShapeError
from ..tensor import Rng, Tensor
from ..tensor import ops
from ..tensor.tensor import make_result


def kept_count(eta: float, tokens: int) -> int:
    """K = max(1, round((1 - eta) * tokens)), rounding halves up."""
    if not 0.0 <= eta < 1.0:
        raise ArgumentError(f"Masking ratio must be in [0, 1), got {eta}")
    return max(1, int(np.floor((1.0 - eta) * tokens + 0.5)))


@dataclass
class SelectionResult:
    """Chosen tokens per sample.

    indices: [..., K] strictly increasing; onehots: [..., K, ST];
    probs: [..., ST]; perturbed: log p + g used for ranking, g kept in ``noise``.
    ``selectors`` carries the straight-through one-hots when the selection is
    learned, and is None for random or disabled masking.
    """
    indices: np.ndarray
    onehots: np.ndarray
    probs: np.ndarray
    perturbed: np.ndarray
    noise: Optional[np.ndarray] = None
    selectors: Optional[Tensor] = None

    @property
    def K(self) -> int:
        return int(self.indices.shape[-1])

    def recall(self, planted: Sequence[Iterable[int]]) -> float:
        return recall(self.indices, planted)


def _onehots(indices: np.ndarray, tokens: int) -> np.ndarray:
    out = np.zeros(indices.shape + (tokens,))
    np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
    return out


def gumbel_topk(p, K: int, rng: Optional[Rng], eps: float = 1e-10,
                deterministic: bool = False) -> SelectionResult:
    """Rank tokens by log p + g and keep the top K, returned in ascending order.

    With ``deterministic`` the noise is dropped and the ranking is by log p.
    """
    probs = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
    tokens = probs.shape[-1]
    if not 1 <= K <= tokens:
        raise ArgumentError(f"K must be in [1, {tokens}], got {K}")
    log_p = np.log(np.maximum(probs, np.finfo(np.float64).tiny))
    if deterministic:
        noise = np.zeros_like(log_p)
    else:
        if rng is None:
            raise ArgumentError("Gumbel sampling needs an Rng")
        noise = rng.gumbel(probs.shape, eps)
    perturbed = log_p + noise
    order = np.argsort(-perturbed, axis=-1, kind="stable")
    indices = np.sort(order[..., :K], axis=-1)
    return SelectionResult(indices, _onehots(indices, tokens), probs, perturbed, noise)


def random_selection(batch: Sequence[int], tokens: int, K: int, rng: Rng) -> SelectionResult:
    """Uniform K-subset per sample, independent of the data."""
    if not 1 <= K <= tokens:
        raise ArgumentError(f"K must be in [1, {tokens}], got {K}")
    count = int(np.prod(batch)) if len(batch) else 1
    rows = [np.sort(rng.choice(tokens, K)) for _ in range(count)]
    indices = np.stack(rows).reshape(tuple(batch) + (K,))
    probs = np.full(tuple(batch) + (tokens,), 1.0 / tokens)
    return SelectionResult(indices, _onehots(indices, tokens), probs, np.log(probs))


def full_selection(batch: Sequence[int], tokens: int) -> SelectionResult:
    indices = np.broadcast_to(np.arange(tokens), tuple(batch) + (tokens,)).copy()
    probs = np.full(tuple(batch) + (tokens,), 1.0 / tokens)
    return SelectionResult(indices, _onehots(indices, tokens), probs, np.log(probs))


def relaxed_selector(logits: Tensor, noise: np.ndarray, rho: float) -> Tensor:
    """softmax((log_softmax(z) + g) / rho) with g held fixed."""
    if rho <= 0:
        raise ArgumentError(f"Gumbel temperature must be positive, got {rho}")
    shifted = ops.add(ops.log_softmax(logits, axis=-1), ops.constant(noise))
    return ops.softmax(ops.scale(shifted, 1.0 / rho), axis=-1)


def st_gradient(perturbed: np.ndarray, c: int, rho: float) -> np.ndarray:
    """Gradient of the relaxed weight of token ``c`` w.r.t. the logits.

    Equals (1/rho) s_c (e_c - s) with s = softmax(perturbed / rho). This is
    the same vector ``relaxed_selector`` backpropagates, since the
    log-softmax shift contributes nothing when the entries sum to zero.
    """
    z = np.asarray(perturbed, dtype=np.float64) / rho
    s = np.exp(z - np.max(z))
    s /= s.sum()
    basis = np.zeros_like(s)
    basis[c] = 1.0
    return s[c] * (basis - s) / rho


def straight_through(soft: Tensor, indices: np.ndarray) -> Tensor:
    """Hard one-hots [..., K, ST] forward; every selector routes its gradient into ``soft``."""
    tokens = soft.dims[-1]
    if indices.shape[:-1] != soft.dims[:-1]:
        raise ShapeError(f"Selection indices {indices.shape} do not match scores {soft.dims}")
    hard = _onehots(indices, tokens)
    return make_result("straight_through", (soft,), hard, lambda g: (g.sum(axis=-2),))


def select_tokens(X: Tensor, sel: SelectionResult) -> Tensor:
    """Rows of X [..., ST, D] at ``sel.indices``; forward values are exact copies.

    Learned selections differentiate x_k = X^T c_k through both X and the
    straight-through selectors.
    """
    if sel.indices.size and (sel.indices.min() < 0 or sel.indices.max() >= X.dims[-2]):
        raise ShapeError(f"Selection index out of range for {X.dims[-2]} tokens")
    if sel.selectors is None:
        return ops.gather_rows(X, sel.indices)

    selectors = sel.selectors
    idx = sel.indices
    out = np.take_along_axis(X.data, idx[..., None], axis=-2)

    def backward(g):
        gx = np.matmul(np.swapaxes(selectors.data, -1, -2), g)
        gsel = np.matmul(g, np.swapaxes(X.data, -1, -2))
        return gx, gsel

    return make_result("select_tokens", (X, selectors), out, backward)


def recall(indices: np.ndarray, planted: Sequence[Iterable[int]]) -> float:
    """Mean over samples of |selected & planted| / |planted|."""
    rows = np.asarray(indices).reshape(-1, np.shape(indices)[-1])
    scores = []
    for row, informative in zip(rows, planted):
        informative = set(int(i) for i in informative)
        if informative:
            scores.append(len(informative.intersection(row.tolist())) / len(informative))
    return float(np.mean(scores)) if scores else 0.0
