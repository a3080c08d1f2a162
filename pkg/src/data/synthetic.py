"""Synthetic video tasks with known informative tokens.

Two generators:

* sparse-token: a handful of planted patches carry class patterns inside
  background noise; the label is the majority pattern, so a model that keeps
  the planted tokens can classify while one that drops them cannot.
* long-range: one pattern in the first frame and one in the last; the label
  combines both, so any truncation of the clip removes the signal.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from ..errors import ArgumentError, DataError
from ..tensor import Rng

TASK_KINDS = ("sparse", "long_range")
SPLITS = ("train", "val", "test")
CHANNELS = 3


@dataclass
class TaskSpec:
    kind: str = "sparse"
    classes: int = 4
    frames: int = 12
    height: int = 32
    width: int = 32
    patch: int = 8
    planted_count: int = 16
    noise_std: float = 1.0
    train_size: int = 2000
    val_size: int = 500
    test_size: int = 500

    @property
    def patches(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def tokens(self) -> int:
        return self.patches * self.frames

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * CHANNELS

    def split_size(self, split: str) -> int:
        return {"train": self.train_size, "val": self.val_size, "test": self.test_size}[split]

    def validate(self) -> None:
        """Check the task parameters"""
        errors = []

        # Check shape
        if self.kind not in TASK_KINDS:
            errors.append(f"kind must be one of {TASK_KINDS}, got {self.kind!r}")
        if self.patch < 1 or self.height % self.patch or self.width % self.patch:
            errors.append(f"frame {self.height}x{self.width} not divisible by patch {self.patch}")
        if self.classes < 2:
            errors.append("classes must be at least 2")
        elif self.patch >= 1 and self.classes > self.patch_dim:
            errors.append(f"classes ({self.classes}) exceed patch dimension ({self.patch_dim})")

        # Check planted tokens
        if self.planted_count < 1:
            errors.append("planted_count must be positive")
        elif self.patch >= 1 and self.planted_count > self.tokens:
            errors.append(f"planted_count {self.planted_count} exceeds S*T = {self.tokens}")
        if self.kind == "long_range":
            if self.frames < 4:
                errors.append("long-range task needs at least 4 frames")
            if self.planted_count < 2 or self.planted_count > 2 * self.patches:
                errors.append("long-range planted_count must be in [2, 2*S]")

        if self.noise_std < 0:
            errors.append("noise_std must be non-negative")
        if min(self.train_size, self.val_size, self.test_size) < 0:
            errors.append("split sizes must be non-negative")

        if errors:
            raise ArgumentError(f"Task errors: {', '.join(errors)}")


@dataclass
class SyntheticVideo:
    frames: np.ndarray
    label: int
    planted: List[Tuple[int, int]]
    seed: int

    def planted_rows(self, patches: int) -> np.ndarray:
        return np.array(sorted(t * patches + s for t, s in self.planted), dtype=np.int64)


@dataclass
class Split:
    """Samples of one split, stacked."""
    frames: np.ndarray                # [n, T, H, W, 3]
    labels: np.ndarray                # [n]
    planted: List[np.ndarray] = field(default_factory=list)  # token rows per sample
    patches: int = 1

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def batch(self, indices: Sequence[int], frames: Optional[int] = None):
        """(frames, labels, planted) for ``indices``; ``frames`` keeps only the leading frames."""
        idx = np.asarray(indices, dtype=np.int64)
        clip = self.frames[idx] if frames is None else self.frames[idx, :frames]
        planted = [self.planted[i] for i in idx]
        if frames is not None:
            planted = [rows[rows < frames * self.patches] for rows in planted]
        return clip, self.labels[idx], planted


@dataclass
class Dataset:
    spec: TaskSpec
    seed: int
    splits: Dict[str, Split]

    def split(self, name: str) -> Split:
        if name not in self.splits:
            raise DataError(f"Dataset has no split {name!r}")
        return self.splits[name]

    def describe(self) -> Dict[str, object]:
        info: Dict[str, object] = asdict(self.spec)
        info["seed"] = self.seed
        for name, split in self.splits.items():
            info[f"{name}_classes"] = np.bincount(split.labels, minlength=self.spec.classes).tolist()
        return info


def class_patterns(spec: TaskSpec, rng: Rng) -> np.ndarray:
    """``classes`` orthonormal patch templates scaled by sqrt(patch_dim): [classes, patch_dim]."""
    q, _ = np.linalg.qr(rng.normal((spec.patch_dim, spec.classes)))
    return q.T * np.sqrt(spec.patch_dim)


def _write_patch(frames: np.ndarray, spec: TaskSpec, t: int, s: int, values: np.ndarray) -> None:
    cols = spec.width // spec.patch
    r, c = divmod(s, cols)
    p = spec.patch
    frames[t, r * p:(r + 1) * p, c * p:(c + 1) * p, :] += values.reshape(p, p, CHANNELS)


def _background(spec: TaskSpec, rng: Rng) -> np.ndarray:
    return rng.normal((spec.frames, spec.height, spec.width, CHANNELS), spec.noise_std)


def make_sparse_sample(spec: TaskSpec, patterns: np.ndarray, rng: Rng) -> SyntheticVideo:
    """Label drawn uniformly; a strict majority of planted tokens carries its pattern."""
    label = int(rng.integers(0, spec.classes))
    rows = np.sort(rng.choice(spec.tokens, spec.planted_count))
    majority = spec.planted_count // 2 + 1
    others = [c for c in range(spec.classes) if c != label]
    kinds = [label] * majority + [others[int(rng.integers(0, len(others)))]
                                  for _ in range(spec.planted_count - majority)]
    order = rng.choice(spec.planted_count, spec.planted_count)

    frames = _background(spec, rng)
    planted = []
    for row, slot in zip(rows, order):
        t, s = divmod(int(row), spec.patches)
        _write_patch(frames, spec, t, s, patterns[kinds[slot]])
        planted.append((t, s))
    return SyntheticVideo(frames, label, planted, rng.seed)


def make_long_range_sample(spec: TaskSpec, patterns: np.ndarray, rng: Rng) -> SyntheticVideo:
    """Pattern a in the first frame, b in the last; label = (a + b) mod classes."""
    a, b = (int(v) for v in rng.integers(0, spec.classes, size=2))
    first = spec.planted_count // 2
    frames = _background(spec, rng)
    planted = []
    for t, count, kind in ((0, first, a), (spec.frames - 1, spec.planted_count - first, b)):
        for s in np.sort(rng.choice(spec.patches, count)):
            _write_patch(frames, spec, t, int(s), patterns[kind])
            planted.append((t, int(s)))
    return SyntheticVideo(frames, (a + b) % spec.classes, planted, rng.seed)


def _generate(spec: TaskSpec, rng: Rng, make) -> Dataset:
    spec.validate()
    patterns = class_patterns(spec, rng.child(0))
    splits = {}
    for split_id, name in enumerate(SPLITS):
        size = spec.split_size(name)
        frames = np.zeros((size, spec.frames, spec.height, spec.width, CHANNELS))
        labels = np.zeros(size, dtype=np.int64)
        planted = []
        for i in range(size):
            # one stream per (split, sample) so samples can be generated independently
            video = make(spec, patterns, rng.child(1, split_id, i))
            frames[i] = video.frames
            labels[i] = video.label
            planted.append(video.planted_rows(spec.patches))
        splits[name] = Split(frames, labels, planted, spec.patches)
        logger.debug(f"generated {size} {spec.kind} samples for split {name}")
    return Dataset(spec, rng.seed, splits)


def gen_sparse_token_task(spec: TaskSpec, rng: Rng) -> Dataset:
    if spec.kind != "sparse":
        raise ArgumentError(f"Expected a sparse task spec, got {spec.kind!r}")
    return _generate(spec, rng, make_sparse_sample)


def gen_long_range_task(spec: TaskSpec, rng: Rng) -> Dataset:
    if spec.kind != "long_range":
        raise ArgumentError(f"Expected a long-range task spec, got {spec.kind!r}")
    return _generate(spec, rng, make_long_range_sample)


def generate_task(spec: TaskSpec, seed: int) -> Dataset:
    make = gen_sparse_token_task if spec.kind == "sparse" else gen_long_range_task
    return make(spec, Rng(seed))
