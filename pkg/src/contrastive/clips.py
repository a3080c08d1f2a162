"""Long/short clip sampling with containment and independent random token masks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..errors import ArgumentError, DataError
from ..model.tokenizer import TokenGrid
from ..selection.gumbel import kept_count
from ..tensor import Rng
from ..tensor import ops


@dataclass
class ClipPair:
    long_frames: np.ndarray           # [T, H, W, 3] sampled every tau_long frames
    short_frames: np.ndarray          # [T, H, W, 3] sampled every tau_short frames
    long_start: int
    short_start: int
    tau_long: int
    tau_short: int
    mask_long: Optional[np.ndarray] = None
    mask_short: Optional[np.ndarray] = None

    @property
    def clip_frames(self) -> int:
        return int(self.long_frames.shape[0])

    @property
    def long_span(self) -> Tuple[int, int]:
        return self.long_start, self.long_start + self.clip_frames * self.tau_long

    @property
    def short_span(self) -> Tuple[int, int]:
        return self.short_start, self.short_start + self.clip_frames * self.tau_short

    def contained(self) -> bool:
        lo, hi = self.long_span
        s_lo, s_hi = self.short_span
        return lo <= s_lo and s_hi <= hi


@dataclass
class ClipBatch:
    long_frames: np.ndarray           # [B, T, H, W, 3]
    short_frames: np.ndarray
    mask_long: np.ndarray             # [B, K]
    mask_short: np.ndarray

    def __len__(self) -> int:
        return int(self.long_frames.shape[0])


def sample_long_short(video: np.ndarray, clip_frames: int, tau_long: int, tau_short: int,
                      rng: Rng) -> ClipPair:
    """Long clip start uniform over valid offsets; short clip start uniform inside the long span."""
    if clip_frames < 1 or tau_long < 1 or tau_short < 1:
        raise ArgumentError(f"Clip frames and strides must be positive "
                            f"(T={clip_frames}, tau_long={tau_long}, tau_short={tau_short})")
    if tau_short > tau_long:
        raise ArgumentError(f"Short stride {tau_short} exceeds long stride {tau_long}")
    length = video.shape[0]
    long_span = clip_frames * tau_long
    if length < long_span:
        raise DataError(f"Video has {length} frames, long clip needs {long_span}")

    long_start = int(rng.integers(0, length - long_span + 1))
    slack = long_span - clip_frames * tau_short
    short_start = long_start + int(rng.integers(0, slack + 1))
    return ClipPair(
        long_frames=video[long_start:long_start + long_span:tau_long],
        short_frames=video[short_start:short_start + clip_frames * tau_short:tau_short],
        long_start=long_start,
        short_start=short_start,
        tau_long=tau_long,
        tau_short=tau_short,
    )


def random_mask_indices(tokens: int, eta: float, rng: Rng) -> np.ndarray:
    """Uniform kept set of ``kept_count(eta, tokens)`` positions, ascending."""
    return np.sort(rng.choice(tokens, kept_count(eta, tokens)))


def random_mask(grid: TokenGrid, eta: float, rng: Rng) -> Tuple[TokenGrid, np.ndarray]:
    """Drop a fraction ``eta`` of the grid's tokens; returns the kept grid and indices."""
    batch = grid.tokens.dims[:-2]
    count = int(np.prod(batch)) if batch else 1
    rows = [random_mask_indices(grid.length, eta, rng.child(i)) for i in range(count)]
    indices = np.stack(rows).reshape(batch + (-1,))
    kept = ops.gather_rows(grid.tokens, indices)
    return TokenGrid(kept, grid.S, grid.T), indices


def make_clip_batch(videos: np.ndarray, clip_frames: int, tau_long: int, tau_short: int,
                    eta: float, tokens: int, rng: Rng) -> ClipBatch:
    """One ClipPair per video, masks drawn independently for the two clips."""
    pairs = []
    for i, video in enumerate(videos):
        sample_rng = rng.child(i)
        pair = sample_long_short(video, clip_frames, tau_long, tau_short, sample_rng.child(0))
        pair.mask_long = random_mask_indices(tokens, eta, sample_rng.child(1))
        pair.mask_short = random_mask_indices(tokens, eta, sample_rng.child(2))
        pairs.append(pair)
    return ClipBatch(
        long_frames=np.stack([p.long_frames for p in pairs]),
        short_frames=np.stack([p.short_frames for p in pairs]),
        mask_long=np.stack([p.mask_long for p in pairs]),
        mask_short=np.stack([p.mask_short for p in pairs]),
    )
