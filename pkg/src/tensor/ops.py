"""Differentiable primitives over :class:`Tensor`.

Every function computes its forward value with numpy and, when an input is
tracked by the active tape, records a backward rule returning one gradient per
input (``None`` where the input is not differentiable). Broadcasting is limited
to leading batch axes and size-1 axes, which ``_unbroadcast`` folds back.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.special import erf

from ..errors import ArgumentError, NumericalError, ShapeError
from .rng import Rng
from .tensor import Tensor, make_result

Axis = Union[int, Tuple[int, ...], None]

SINGULAR_PIVOT = 1e-12


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand(grad: np.ndarray, shape: Tuple[int, ...], axes: Tuple[int, ...],
            keepdims: bool) -> np.ndarray:
    if not keepdims:
        for a in sorted(axes):
            grad = np.expand_dims(grad, a)
    return np.broadcast_to(grad, shape)


def constant(array) -> Tensor:
    """Untracked tensor holding a private copy of ``array``."""
    return Tensor._wrap(array, copy=True)


# -- elementwise -------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return make_result("add", (a, b), out,
                       lambda g: (_unbroadcast(g, a.dims), _unbroadcast(g, b.dims)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return make_result("sub", (a, b), out,
                       lambda g: (_unbroadcast(g, a.dims), _unbroadcast(-g, b.dims)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return make_result("mul", (a, b), out,
                       lambda g: (_unbroadcast(g * b.data, a.dims), _unbroadcast(g * a.data, b.dims)))


def scale(a: Tensor, factor: float) -> Tensor:
    return make_result("scale", (a,), a.data * factor, lambda g: (g * factor,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericalError("log() of a non-positive value")
    return make_result("log", (a,), np.log(a.data), lambda g: (g / a.data,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_result("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def gelu(a: Tensor) -> Tensor:
    """Exact form x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return make_result("gelu", (a,), x * cdf, lambda g: (g * (cdf + x * pdf),))


# -- reductions --------------------------------------------------------------

def sum(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _axes(axis, a.ndim)
    out = np.sum(a.data, axis=axes, keepdims=keepdims)
    return make_result("sum", (a,), out, lambda g: (_expand(g, a.dims, axes, keepdims),))


def mean(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _axes(axis, a.ndim)
    count = int(np.prod([a.dims[i] for i in axes]))
    out = np.mean(a.data, axis=axes, keepdims=keepdims)
    return make_result("mean", (a,), out,
                       lambda g: (_expand(g, a.dims, axes, keepdims) / count,))


def variance(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    """Population variance (divides by the element count)."""
    axes = _axes(axis, a.ndim)
    count = int(np.prod([a.dims[i] for i in axes]))
    centered = a.data - np.mean(a.data, axis=axes, keepdims=True)
    out = np.mean(centered * centered, axis=axes, keepdims=keepdims)
    return make_result("variance", (a,), out,
                       lambda g: (_expand(g, a.dims, axes, keepdims) * 2.0 * centered / count,))


# -- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got dims {a.dims} and {b.dims}")
    if a.dims[-1] != b.dims[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.dims} @ {b.dims}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.dims), _unbroadcast(gb, b.dims)

    return make_result("matmul", (a, b), out, backward)


def matvec(m: Tensor, v: Tensor) -> Tensor:
    """Batched matrix-vector product ``m[..., i, j] v[..., j]``."""
    if m.ndim < 2 or m.dims[-1] != v.dims[-1]:
        raise ShapeError(f"matvec dims disagree: {m.dims} x {v.dims}")
    out = np.matmul(m.data, v.data[..., None])[..., 0]

    def backward(g):
        gm = g[..., :, None] * v.data[..., None, :]
        gv = np.matmul(np.swapaxes(m.data, -1, -2), g[..., None])[..., 0]
        return _unbroadcast(gm, m.dims), _unbroadcast(gv, v.dims)

    return make_result("matvec", (m, v), out, backward)


def linear_solve(m: Tensor, r: Tensor, context: str = "") -> Tensor:
    """Solve ``m x = r`` by LU with partial pivoting; never forms an inverse.

    ``m`` is ``[..., N, N]``; ``r`` is ``[..., N]`` or ``[..., N, K]`` with the
    same batch extents.
    """
    n = m.dims[-1]
    if m.ndim < 2 or m.dims[-2] != n:
        raise ShapeError(f"linear_solve needs square systems, got {m.dims}")
    vector = r.ndim == m.ndim - 1
    batch = m.dims[:-2]
    if r.dims[:len(batch)] != batch or r.dims[len(batch)] != n:
        raise ShapeError(f"linear_solve rhs {r.dims} does not match system {m.dims}")

    mb = m.data.reshape(-1, n, n)
    rb = r.data.reshape(mb.shape[0], n, -1)
    factors = []
    solution = np.empty_like(rb)
    for i in range(mb.shape[0]):
        lu, piv = lu_factor(mb[i], check_finite=False)
        pivot = float(np.min(np.abs(np.diag(lu))))
        if pivot < SINGULAR_PIVOT:
            raise NumericalError(f"Singular system{context}: pivot {pivot:.3e} below "
                                 f"{SINGULAR_PIVOT:g} (N={n})")
        factors.append((lu, piv))
        solution[i] = lu_solve((lu, piv), rb[i], check_finite=False)
    out = solution.reshape(r.dims)

    def backward(g):
        gb = g.reshape(solution.shape)
        gr = np.empty_like(gb)
        for i, factor in enumerate(factors):
            gr[i] = lu_solve(factor, gb[i], trans=1, check_finite=False)
        gm = -np.matmul(gr, np.swapaxes(solution, -1, -2))
        return gm.reshape(m.dims), gr.reshape(r.dims)

    return make_result("linear_solve", (m, r), out, backward)


# -- shape manipulation ------------------------------------------------------

def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_result("transpose", (a,), np.transpose(a.data, axes),
                       lambda g: (np.transpose(g, inverse),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    out = a.data.reshape(tuple(shape))
    return make_result("reshape", (a,), out, lambda g: (g.reshape(a.dims),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.dims[axis] for t in tensors])[:-1]
    return make_result("concat", tensors, out, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_result("stack", tensors, out, backward)


def gather(a: Tensor, indices: Sequence[int], axis: int = 0) -> Tensor:
    """``np.take`` along one axis with a shared 1-D index list."""
    idx = np.asarray(indices, dtype=np.int64)
    extent = a.dims[axis]
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= extent)):
        raise ShapeError(f"gather indices out of range for extent {extent}")
    out = np.take(a.data, idx, axis=axis)

    def backward(g):
        ga = np.zeros(a.dims)
        np.add.at(np.moveaxis(ga, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (ga,)

    return make_result("gather", (a,), out, backward)


def gather_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Rows of ``a[..., N, D]`` picked by ``indices[..., K]`` (per batch row)."""
    idx = np.asarray(indices, dtype=np.int64)
    n = a.dims[-2]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"gather_rows index out of range for {n} rows")
    batch = a.dims[:-2]
    idx = np.broadcast_to(idx, batch + idx.shape[-1:])
    out = np.take_along_axis(a.data, idx[..., None], axis=-2)

    def backward(g):
        ga = np.zeros(a.dims)
        grid = np.indices(idx.shape)[:-1]
        np.add.at(ga, (*grid, idx), g)
        return (ga,)

    return make_result("gather_rows", (a,), out, backward)


# -- normalisation and activations -------------------------------------------

def normalize(a: Tensor, axis: Axis = -1, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance over ``axis`` (no affine)."""
    if eps <= 0:
        raise ArgumentError(f"eps must be positive, got {eps}")
    axes = _axes(axis, a.ndim)
    mu = np.mean(a.data, axis=axes, keepdims=True)
    var = np.mean((a.data - mu) ** 2, axis=axes, keepdims=True)
    sigma = np.sqrt(var + eps)
    y = (a.data - mu) / sigma

    def backward(g):
        g_mean = np.mean(g, axis=axes, keepdims=True)
        gy_mean = np.mean(g * y, axis=axes, keepdims=True)
        return ((g - g_mean - y * gy_mean) / sigma,)

    return make_result("normalize", (a,), y, backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if x.ndim == 0 or x.dims[-1] == 0:
        raise ShapeError("layer_norm needs a non-empty last axis")
    if gamma.dims != x.dims[-1:] or beta.dims != x.dims[-1:]:
        raise ShapeError(f"layer_norm affine dims {gamma.dims}/{beta.dims} vs input {x.dims}")
    return add(mul(normalize(x, -1, eps), gamma), beta)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each feature over the batch axis (axis 0) with batch statistics."""
    if x.ndim != 2:
        raise ShapeError(f"batch_norm expects [B, F], got {x.dims}")
    if x.dims[0] < 2:
        raise ArgumentError("batch_norm needs at least two samples in the batch")
    return add(mul(normalize(x, 0, eps), gamma), beta)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=axis, keepdims=True)
    return make_result("softmax", (a,), s,
                       lambda g: (s * (g - np.sum(g * s, axis=axis, keepdims=True)),))


def _log_softmax(data: np.ndarray, axis: int) -> np.ndarray:
    shifted = data - np.max(data, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    ls = _log_softmax(a.data, axis)
    s = np.exp(ls)
    return make_result("log_softmax", (a,), ls,
                       lambda g: (g - s * np.sum(g, axis=axis, keepdims=True),))


def dropout(a: Tensor, p: float, rng: Optional[Rng], train: bool) -> Tensor:
    """Inverted dropout; the identity when not training or ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ArgumentError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return a
    if rng is None:
        raise ArgumentError("dropout in training mode needs an Rng")
    mask = (rng.uniform(a.dims) >= p) / (1.0 - p)
    return make_result("dropout", (a,), a.data * mask, lambda g: (g * mask,))


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = np.maximum(np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True)), eps)
    y = a.data / norm
    return make_result("l2_normalize", (a,), y,
                       lambda g: ((g - y * np.sum(g * y, axis=axis, keepdims=True)) / norm,))


# -- losses and similarities -------------------------------------------------

def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    lab = np.asarray(labels, dtype=np.int64)
    classes = logits.dims[-1]
    if lab.shape != logits.dims[:-1]:
        raise ShapeError(f"labels {lab.shape} do not match logits {logits.dims}")
    if lab.size and (lab.min() < 0 or lab.max() >= classes):
        raise ArgumentError(f"label out of range for {classes} classes")
    ls = _log_softmax(logits.data, -1)
    picked = np.take_along_axis(ls, lab[..., None], axis=-1)[..., 0]
    count = max(1, lab.size)
    out = np.asarray(-np.sum(picked) / count)

    def backward(g):
        grad = np.exp(ls)
        np.put_along_axis(grad, lab[..., None],
                          np.take_along_axis(grad, lab[..., None], axis=-1) - 1.0, axis=-1)
        return (grad * (float(g) / count),)

    return make_result("cross_entropy", (logits,), out, backward)


def dot(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    return sum(mul(a, b), axis=axis)


def cosine_similarity(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    return dot(l2_normalize(a, axis), l2_normalize(b, axis), axis)
