"""AdamW with decoupled weight decay over a :class:`ParameterTable`."""
from __future__ import annotations

from typing import Dict, Iterable, Mapping, Optional, Tuple

import numpy as np

from ..errors import ArgumentError, CheckpointError, ShapeError
from ..tensor import ParameterTable


def adamw_step(theta: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, step: int,
               lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
               weight_decay: float = 0.0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One update at 1-based ``step``; returns (theta, m, v).

    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta, decay on the old theta.
    """
    if theta.shape != grad.shape or m.shape != theta.shape or v.shape != theta.shape:
        raise ShapeError(f"AdamW shapes disagree: theta {theta.shape}, grad {grad.shape}")
    if step < 1:
        raise ArgumentError(f"AdamW step count starts at 1, got {step}")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps) - lr * weight_decay * theta
    return theta, m, v


class AdamW:
    """
    AdamW optimizer keyed by parameter name.

    Args:
        lr: Learning rate (the scheduler rewrites it between epochs).
        beta1, beta2: Moment decay rates.
        eps: Denominator guard.
        weight_decay: Decoupled decay coefficient.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.01):
        if lr <= 0 or eps <= 0 or weight_decay < 0:
            raise ArgumentError(f"Invalid AdamW settings lr={lr}, eps={eps}, wd={weight_decay}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, table: ParameterTable, grads: Mapping[str, np.ndarray],
             names: Optional[Iterable[str]] = None) -> None:
        """Apply one update to every parameter with a gradient (or to ``names``)."""
        self.step_count += 1
        for name in (names if names is not None else grads):
            grad = grads[name]
            theta = table[name]
            m = self.m.get(name, np.zeros_like(theta))
            v = self.v.get(name, np.zeros_like(theta))
            theta, self.m[name], self.v[name] = adamw_step(
                theta, grad, m, v, self.step_count, self.lr,
                self.beta1, self.beta2, self.eps, self.weight_decay,
            )
            table[name] = theta

    def state_table(self) -> ParameterTable:
        """Moments as a flat table (``m.<name>``, ``v.<name>``) in sorted name order."""
        table = ParameterTable()
        for name in sorted(self.m):
            table.add("m." + name, self.m[name])
            table.add("v." + name, self.v[name])
        return table

    def load_state(self, table: ParameterTable, step_count: int,
                   params: Optional[ParameterTable] = None) -> None:
        self.m, self.v = {}, {}
        for key, value in table.items():
            kind, _, name = key.partition(".")
            if kind not in ("m", "v") or not name:
                raise CheckpointError(f"Unexpected optimizer state entry {key}")
            if params is not None and (name not in params or params[name].shape != value.shape):
                raise CheckpointError(f"Optimizer state {key} does not match the model")
            (self.m if kind == "m" else self.v)[name] = value.copy()
        self.step_count = int(step_count)
