"""Fine-tuning loop for the S5 classifier."""
from __future__ import annotations

import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, List, Optional, Union

import numpy as np
from loguru import logger

from config.config import TrainConfig, parse_config_text
from ..contrastive.pretrain import transfer_init
from ..data import ClipPrefetcher, Dataset
from ..data.synthetic import SPLITS
from ..errors import CheckpointError, NumericalError
from ..model.network import ModelDims, S5Classifier
from ..selection import SelectionOptions, momentum_update
from ..tensor import GradTape, ParameterTable, Rng, constants
from ..tensor import ops
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .metrics import MetricsLog, MetricsRow, load_metrics_log
from .optimizer import AdamW
from .scheduler import PlateauScheduler

CHECKPOINT_NAME = "latest.s5ck"
METRICS_NAME = "metrics.csv"

# Rng streams under the run seed
_INIT, _SHUFFLE, _BATCH, _EVAL = 2, 0, 1, 3


def build_classifier(config: TrainConfig) -> S5Classifier:
    options = SelectionOptions(config.eta, config.selection, config.mask_input,
                               config.deterministic_topk)
    return S5Classifier(ModelDims.from_config(config), options, config.rho_g,
                        config.gumbel_eps, config.m_s4)


@dataclass
class BatchStats:
    loss: float
    correct: int
    count: int
    recall: float
    kept: int
    peak_bytes: int = 0
    s5_bytes: int = 0


def _summarize(epoch: int, split: str, stats: List[BatchStats], wall_ms: float) -> MetricsRow:
    count = sum(s.count for s in stats)
    return MetricsRow(
        epoch=epoch,
        split=split,
        loss=sum(s.loss * s.count for s in stats) / max(1, count),
        accuracy=sum(s.correct for s in stats) / max(1, count),
        recall=sum(s.recall * s.count for s in stats) / max(1, count),
        kept_tokens=stats[0].kept if stats else 0,
        wall_ms=wall_ms,
        peak_bytes=max((s.peak_bytes for s in stats), default=0),
    )


class Trainer:
    """
    Owns the parameter table, optimizer and schedule of one fine-tuning run.

    Args:
        config: Validated run configuration.
        dataset: Loaded dataset; never modified.
        out_dir: Where ``metrics.csv`` and ``latest.s5ck`` go (None keeps everything in memory).
    """

    def __init__(self, config: TrainConfig, dataset: Dataset,
                 out_dir: Union[str, Path, None] = None):
        self.config = config
        self.dataset = dataset
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.classifier = build_classifier(config)
        self.rng = Rng(config.seed)
        self.table: ParameterTable = self.classifier.init_params(self.rng.child(_INIT))
        self.optimizer = AdamW(config.lr, config.beta1, config.beta2, config.adam_eps,
                               config.weight_decay)
        self.scheduler = PlateauScheduler(config.lr, config.plateau_factor,
                                          config.plateau_patience_epochs, config.min_lr)
        self.metrics = MetricsLog(self.out_dir / METRICS_NAME if self.out_dir else None)
        self.epoch = 0

        if config.pretrained_checkpoint:
            pretrained = load_checkpoint(config.pretrained_checkpoint, kind="pretrain")
            transfer_init(pretrained.params, self.classifier, self.table)

    @property
    def frames(self) -> Optional[int]:
        return self.config.input_frames

    def _batches(self, size: int, order: np.ndarray) -> List[np.ndarray]:
        bs = self.config.batch_size
        return [order[i:i + bs] for i in range(0, size, bs)]

    def train_step(self, indices: np.ndarray, rng: Rng) -> BatchStats:
        """Forward, cross-entropy, backward, AdamW, then the shadow EMA."""
        frames, labels, planted = self.dataset.split("train").batch(indices, self.frames)
        with GradTape() as tape:
            bound = tape.bind(self.table, self.classifier.trainable(self.table))
            result = self.classifier.forward(bound, frames, rng, train=True)
            loss = ops.cross_entropy(result.logits, labels)
            if not np.isfinite(loss.item()):
                raise NumericalError(f"Training loss is {loss.item()} at epoch {self.epoch}")
            grads = tape.backward(loss)
            peak, s5_bytes = tape.peak_bytes, tape.scope_bytes.get("s5_block", 0)

        self.optimizer.step(self.table, grads)
        momentum_update(self.classifier.shadow, self.table)
        predicted = np.argmax(result.logits.data, axis=-1)
        return BatchStats(loss.item(), int(np.sum(predicted == labels)), len(labels),
                          result.selection.recall(planted), result.selection.K, peak, s5_bytes)

    def train_epoch(self, epoch: int) -> MetricsRow:
        split = self.dataset.split("train")
        order = self.rng.child(_SHUFFLE, epoch).choice(len(split), len(split))
        start = time.perf_counter()
        stats = [self.train_step(np.sort(idx), self.rng.child(_BATCH, epoch, b))
                 for b, idx in enumerate(self._batches(len(split), order))]
        wall_ms = (time.perf_counter() - start) * 1e3 if self.config.record_timing else 0.0
        return _summarize(epoch, "train", stats, wall_ms)

    def eval_options(self) -> SelectionOptions:
        deterministic = self.config.deterministic_topk or not self.config.eval_sampling
        return replace(self.classifier.options, deterministic_topk=deterministic)

    def _eval_batch(self, bound, split: str, epoch: int, b: int, indices: np.ndarray,
                    options: SelectionOptions) -> BatchStats:
        frames, labels, planted = self.dataset.split(split).batch(indices, self.frames)
        rng = self.rng.child(_EVAL, SPLITS.index(split), epoch, b)
        result = self.classifier.forward(bound, frames, rng, False, options)
        loss = ops.cross_entropy(result.logits, labels).item()
        predicted = np.argmax(result.logits.data, axis=-1)
        return BatchStats(loss, int(np.sum(predicted == labels)), len(labels),
                          result.selection.recall(planted), result.selection.K)

    def evaluate(self, split: str = "val", epoch: Optional[int] = None) -> MetricsRow:
        """Loss, accuracy, planted-token recall and K on ``split``; batches run on worker threads."""
        epoch = self.epoch if epoch is None else epoch
        size = len(self.dataset.split(split))
        batches = self._batches(size, np.arange(size))
        options = self.eval_options()
        bound = constants(self.table)
        start = time.perf_counter()
        prefetcher = ClipPrefetcher(
            lambda b: self._eval_batch(bound, split, epoch, b, batches[b], options),
            len(batches), workers=self.config.workers,
        )
        stats = list(prefetcher)
        wall_ms = (time.perf_counter() - start) * 1e3 if self.config.record_timing else 0.0
        return _summarize(epoch, split, stats, wall_ms)

    def _record(self, row: MetricsRow) -> None:
        self.metrics.append(row)
        logger.info(f"epoch {row.epoch:3d} {row.split:5s} loss {row.loss:.4f} "
                    f"acc {row.accuracy:.3f} recall {row.recall:.3f} K {row.kept_tokens}")

    def fit(self, resume: bool = False) -> MetricsLog:
        """Run the remaining epochs, checkpointing after each, then score the test split."""
        if resume:
            self.resume()
        for epoch in range(self.epoch + 1, self.config.epochs + 1):
            self.optimizer.lr = self.scheduler.lr
            train_row = self.train_epoch(epoch)
            self._record(train_row)
            self._record(self.evaluate("val", epoch))
            self.scheduler.step(train_row.loss)
            self.epoch = epoch
            self.save()
        self._record(self.evaluate("test", self.epoch))
        self.metrics.flush()
        return self.metrics

    def checkpoint(self) -> Checkpoint:
        return Checkpoint("classifier", self.config.to_text(), self.table,
                          self.optimizer.state_table(), self.optimizer.step_count,
                          self.epoch, self.scheduler.lr, list(self.scheduler.history))

    def save(self, path: Union[str, Path, None] = None) -> None:
        if path is None:
            if self.out_dir is None:
                return
            path = self.out_dir / CHECKPOINT_NAME
        save_checkpoint(self.checkpoint(), path)
        self.metrics.flush()

    def restore(self, ckpt: Checkpoint) -> None:
        if ckpt.kind != "classifier":
            raise CheckpointError(f"Cannot restore a {ckpt.kind} checkpoint into a classifier")
        if list(ckpt.params) != list(self.table) or ckpt.params.shapes() != self.table.shapes():
            raise CheckpointError("Checkpoint parameters do not match the configured model")
        self.table = ckpt.params.copy()
        self.optimizer.load_state(ckpt.optimizer, ckpt.optimizer_step, self.table)
        self.scheduler.lr = ckpt.lr
        self.scheduler.history = list(ckpt.history)
        self.optimizer.lr = ckpt.lr
        self.epoch = ckpt.epoch

    def resume(self) -> None:
        """Continue from ``latest.s5ck`` in the output directory when it exists."""
        if self.out_dir is None or not (self.out_dir / CHECKPOINT_NAME).is_file():
            logger.info("No checkpoint to resume from; starting fresh")
            return
        self.restore(load_checkpoint(self.out_dir / CHECKPOINT_NAME, kind="classifier"))
        if (self.out_dir / METRICS_NAME).is_file():
            self.metrics = load_metrics_log(self.out_dir / METRICS_NAME)
            self.metrics.truncate(self.epoch)
            self.metrics.rows = [r for r in self.metrics.rows if r.split != "test"]
        logger.info(f"Resumed at epoch {self.epoch}, lr {self.scheduler.lr:g}")

    @classmethod
    def from_checkpoint(cls, path: Union[str, Path], dataset: Dataset,
                        out_dir: Union[str, Path, None] = None, **overrides: Any) -> "Trainer":
        """Rebuild a trainer from a classifier checkpoint and its config echo.

        ``overrides`` (e.g. ``seed`` or ``deterministic_topk`` from the command line)
        are applied on top of the echoed config.
        """
        ckpt = load_checkpoint(path, kind="classifier")
        config = parse_config_text(ckpt.config_text, f"{path} (config echo)")
        trainer = cls(config.replace(pretrained_checkpoint=None, **overrides), dataset, out_dir)
        trainer.restore(ckpt)
        return trainer
