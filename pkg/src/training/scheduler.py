"""Learning-rate schedules: reduce-on-plateau for fine-tuning, linear warm-up for pretraining."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

from loguru import logger

from ..errors import ArgumentError

LR_FLOOR = 1e-7


def plateau_scheduler(history: Sequence[float], lr: float, factor: float = 0.2,
                      patience: int = 1, floor: float = LR_FLOOR) -> float:
    """Reduce ``lr`` by ``factor`` when the latest loss is no better than the
    best of the ``patience`` losses before it."""
    if not 0.0 < factor < 1.0:
        raise ArgumentError(f"Plateau factor must be in (0, 1), got {factor}")
    if patience < 1:
        raise ArgumentError(f"Plateau patience must be positive, got {patience}")
    if len(history) <= patience:
        return lr
    window = history[-patience - 1:-1]
    if history[-1] >= min(window):
        return max(lr * factor, floor)
    return lr


@dataclass
class PlateauScheduler:
    lr: float
    factor: float = 0.2
    patience: int = 1
    floor: float = LR_FLOOR
    history: List[float] = field(default_factory=list)

    def step(self, epoch_loss: float) -> float:
        self.history.append(float(epoch_loss))
        new_lr = plateau_scheduler(self.history, self.lr, self.factor, self.patience, self.floor)
        if new_lr != self.lr:
            if new_lr == self.floor:
                logger.warning(f"Learning rate clamped at floor {self.floor:g}")
            else:
                logger.debug(f"Loss plateaued at {epoch_loss:.6f}; lr {self.lr:g} -> {new_lr:g}")
        self.lr = new_lr
        return self.lr


@dataclass
class WarmupSchedule:
    """Linear ramp over the first ``warmup_fraction`` of epochs, then constant."""
    base_lr: float
    epochs: int
    warmup_fraction: float = 0.13

    @property
    def warmup_epochs(self) -> int:
        return int(round(self.epochs * self.warmup_fraction))

    def lr_at(self, epoch: int) -> float:
        warmup = self.warmup_epochs
        if warmup == 0 or epoch >= warmup:
            return self.base_lr
        return self.base_lr * (epoch + 1) / warmup
