"""LSMCL pretraining loop: clip batches on worker threads, warm-up, key EMA."""
from __future__ import annotations

import time
from pathlib import Path
from typing import List, Union

import numpy as np
import pandas as pd
from loguru import logger

from config.config import TrainConfig
from ..contrastive import ContrastiveHeads, LsmclModel, lsmcl_step, make_clip_batch
from ..data import ClipPrefetcher, Dataset, atomic_write
from ..model.network import ModelDims
from ..tensor import ParameterTable, Rng
from .checkpoint import Checkpoint, save_checkpoint
from .optimizer import AdamW
from .scheduler import WarmupSchedule

PRETRAIN_CHECKPOINT = "pretrain.s5ck"
PRETRAIN_METRICS = "pretrain_metrics.csv"
PRETRAIN_COLUMNS = ("epoch", "lr", "loss", "positive", "negative", "wall_ms", "peak_bytes")

_INIT, _SHUFFLE, _CLIPS, _DROPOUT = 2, 0, 1, 4


def build_lsmcl(config: TrainConfig) -> LsmclModel:
    heads = ContrastiveHeads(ModelDims.from_config(config), config.head_hidden, config.head_out)
    return LsmclModel(heads, config.rho_nce, config.m_key)


class Pretrainer:
    """
    Long-short masked contrastive pretraining of the backbone.

    The query encoder trains with AdamW; the key encoder follows it by EMA after
    every step. Epoch rows (loss and alignment) go to ``pretrain_metrics.csv``.
    """

    def __init__(self, config: TrainConfig, dataset: Dataset,
                 out_dir: Union[str, Path, None] = None):
        self.config = config
        self.dataset = dataset
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.model = build_lsmcl(config)
        self.rng = Rng(config.seed)
        self.table: ParameterTable = self.model.init_params(self.rng.child(_INIT))
        self.optimizer = AdamW(config.pretrain_lr, config.beta1, config.beta2, config.adam_eps,
                               config.pretrain_weight_decay)
        self.schedule = WarmupSchedule(config.pretrain_lr, config.pretrain_epochs,
                                       config.warmup_fraction)
        self.rows: List[dict] = []
        self.epoch = 0

    @property
    def clip_tokens(self) -> int:
        return self.model.heads.dims.patches * self.config.clip_frames

    def _batches(self, epoch: int) -> List[np.ndarray]:
        size = len(self.dataset.split("train"))
        bs = self.config.pretrain_batch_size
        order = self.rng.child(_SHUFFLE, epoch).choice(size, size)
        # a trailing batch of one has no in-batch negatives
        return [np.sort(order[i:i + bs]) for i in range(0, size, bs) if min(bs, size - i) >= 2]

    def run_epoch(self, epoch: int) -> dict:
        cfg = self.config
        videos = self.dataset.split("train").frames
        batches = self._batches(epoch)
        self.optimizer.lr = self.schedule.lr_at(epoch - 1)
        prefetcher = ClipPrefetcher(
            lambda b: make_clip_batch(videos[batches[b]], cfg.clip_frames, cfg.tau_long,
                                      cfg.tau_short, cfg.pretrain_eta, self.clip_tokens,
                                      self.rng.child(_CLIPS, epoch, b)),
            len(batches), workers=cfg.workers,
        )
        start = time.perf_counter()
        results = [lsmcl_step(self.model, self.table, self.optimizer, batch,
                              self.rng.child(_DROPOUT, epoch, b))
                   for b, batch in enumerate(prefetcher)]
        wall_ms = (time.perf_counter() - start) * 1e3 if cfg.record_timing else 0.0
        row = {
            "epoch": epoch,
            "lr": self.optimizer.lr,
            "loss": float(np.mean([r.loss for r in results])) if results else 0.0,
            "positive": float(np.mean([r.positive for r in results])) if results else 0.0,
            "negative": float(np.mean([r.negative for r in results])) if results else 0.0,
            "wall_ms": wall_ms,
            "peak_bytes": max((r.peak_bytes for r in results), default=0),
        }
        logger.info(f"pretrain epoch {epoch:3d} lr {row['lr']:.2e} loss {row['loss']:.4f} "
                    f"pos {row['positive']:.3f} neg {row['negative']:.3f}")
        return row

    def fit(self) -> pd.DataFrame:
        if len(self.dataset.split("train")) < 2:
            logger.warning("Fewer than two training videos; nothing to pretrain on")
        for epoch in range(self.epoch + 1, self.config.pretrain_epochs + 1):
            self.rows.append(self.run_epoch(epoch))
            self.epoch = epoch
        self.save()
        return self.frame()

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=list(PRETRAIN_COLUMNS))

    def checkpoint(self) -> Checkpoint:
        return Checkpoint("pretrain", self.config.to_text(), self.table,
                          self.optimizer.state_table(), self.optimizer.step_count,
                          self.epoch, self.optimizer.lr, [row["loss"] for row in self.rows])

    def save(self) -> None:
        if self.out_dir is None:
            return
        save_checkpoint(self.checkpoint(), self.out_dir / PRETRAIN_CHECKPOINT)
        atomic_write(self.out_dir / PRETRAIN_METRICS,
                     self.frame().to_csv(index=False).encode("utf-8"))
