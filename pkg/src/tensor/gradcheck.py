"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from typing import Callable, Iterable, Optional, Tuple

import numpy as np

from ..errors import ArgumentError, ShapeError
from .tensor import GradTape, Tensor


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
                      coords: Optional[Iterable[Tuple[int, ...]]] = None) -> float:
    """Max over coordinates of |analytic - numeric| / max(1, |analytic|).

    ``f`` must build its output from the tensor it is handed. ``coords``
    restricts the numeric sweep to a subset of coordinates for large inputs.
    """
    if h <= 0:
        raise ArgumentError(f"Finite-difference step must be positive, got {h}")
    x = x if isinstance(x, Tensor) else Tensor(x)

    with GradTape() as tape:
        watched = tape.watch(x, "x")
        out = f(watched)
        if out.size != 1:
            raise ShapeError(f"finite_diff_check needs a scalar function, got dims {out.dims}")
        if tape.tracks(out):
            analytic = tape.backward(out)["x"]
        else:
            analytic = np.zeros(x.dims)

    base = x.numpy()
    worst = 0.0
    for idx in (coords if coords is not None else np.ndindex(*x.dims)):
        plus = base.copy()
        plus[idx] += h
        minus = base.copy()
        minus[idx] -= h
        numeric = (f(Tensor(plus)).item() - f(Tensor(minus)).item()) / (2.0 * h)
        err = abs(analytic[idx] - numeric) / max(1.0, abs(analytic[idx]))
        worst = max(worst, err)
    return worst
