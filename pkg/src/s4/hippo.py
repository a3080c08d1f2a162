"""HiPPO state-matrix construction."""
import numpy as np

from ..errors import ArgumentError


def hippo_init(n: int) -> np.ndarray:
    """HiPPO matrix with zero-based row/column indices.

    Below the diagonal ``-sqrt(2n+1) * sqrt(2k+1)``, on it ``-(n+1)``, above it 0.
    """
    if n < 1:
        raise ArgumentError(f"HiPPO state dimension must be positive, got {n}")
    root = np.sqrt(2.0 * np.arange(n) + 1.0)
    lower = np.tril(-np.outer(root, root), k=-1)
    return lower - np.diag(np.arange(1, n + 1, dtype=np.float64))
