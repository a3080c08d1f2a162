"""Frame patching, patch embedding and additive spatial/temporal encodings."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Tuple

import numpy as np

from ..errors import ShapeError
from ..tensor import Rng, Tensor
from ..tensor import ops
from .layers import linear


@dataclass
class TokenGrid:
    """Tokens [..., S*T, D] in t-major, s-minor order."""
    tokens: Tensor
    S: int
    T: int

    @property
    def length(self) -> int:
        return self.S * self.T

    @property
    def width(self) -> int:
        return self.tokens.dims[-1]

    def coords(self, row: int) -> Tuple[int, int]:
        """Row index -> (t, s)."""
        return divmod(int(row), self.S)

    def index(self, t: int, s: int) -> int:
        return t * self.S + s


@dataclass
class PositionalEncodings:
    spatial: Tensor
    temporal: Tensor

    @staticmethod
    def init(rng: Rng, patches: int, frames: int, width: int, std: float = 0.02) -> Dict[str, np.ndarray]:
        return {
            "spatial": rng.normal((patches, width), std),
            "temporal": rng.normal((frames, width), std),
        }

    @classmethod
    def from_bound(cls, bound: Mapping[str, Tensor], prefix: str = "pos.") -> "PositionalEncodings":
        return cls(bound[prefix + "spatial"], bound[prefix + "temporal"])

    def table(self, patches: int, frames: int) -> Tensor:
        """e_s + e^t laid out as [frames * patches, D].

        Clips shorter than the temporal table use its leading rows.
        """
        if self.spatial.dims[0] != patches:
            raise ShapeError(f"Spatial table has {self.spatial.dims[0]} rows, grid has {patches} patches")
        if frames > self.temporal.dims[0]:
            raise ShapeError(f"Temporal table has {self.temporal.dims[0]} rows, clip has {frames} frames")
        width = self.spatial.dims[1]
        temporal = self.temporal
        if frames < temporal.dims[0]:
            temporal = ops.gather(temporal, range(frames), axis=0)
        grid = ops.add(ops.reshape(temporal, (frames, 1, width)),
                       ops.reshape(self.spatial, (1, patches, width)))
        return ops.reshape(grid, (frames * patches, width))


def patchify(frames: np.ndarray, patch: int) -> np.ndarray:
    """[..., T, H, W, C] -> [..., T*S, patch*patch*C]; patches in row-major (h, w) order."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim < 4:
        raise ShapeError(f"Frames must be [..., T, H, W, C], got {frames.shape}")
    *lead, t, h, w, c = frames.shape
    if patch < 1 or h % patch or w % patch:
        raise ShapeError(f"Frame size {h}x{w} is not divisible by patch {patch}")
    rows, cols = h // patch, w // patch
    grid = frames.reshape(*lead, t, rows, patch, cols, patch, c)
    grid = np.moveaxis(grid, -3, -4)  # [..., t, rows, cols, patch, patch, c]
    return grid.reshape(*lead, t * rows * cols, patch * patch * c)


def tokenize(frames: np.ndarray, patch: int, bound: Mapping[str, Tensor],
             enc: PositionalEncodings, prefix: str = "") -> TokenGrid:
    """x_s^t = embed(patch) + e_s + e^t."""
    patches = patchify(frames, patch)
    t = np.shape(frames)[-4]
    s = patches.shape[-2] // t
    z = linear(ops.constant(patches), bound, prefix + "embed.")
    return TokenGrid(ops.add(z, enc.table(s, t)), s, t)
