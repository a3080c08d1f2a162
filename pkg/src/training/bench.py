"""Activation memory and throughput of training steps with and without token selection."""
from __future__ import annotations

import time
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from loguru import logger
from rich.console import Console
from rich.table import Table

from config.config import TrainConfig
from ..data import Dataset, atomic_write
from ..errors import DataError
from ..tensor import Rng
from .trainer import Trainer

BENCH_ETAS = (0.0, 0.5)
BENCH_COLUMNS = ("eta", "tokens", "kept_tokens", "s5_block_bytes", "peak_bytes",
                 "tokens_per_sec", "s5_bytes_ratio")


def bench_eta(config: TrainConfig, dataset: Dataset, eta: float) -> dict:
    """Mean over ``bench_steps`` training steps on the same leading batch."""
    cfg = config.replace(eta=eta, selection="learned", pretrained_checkpoint=None)
    trainer = Trainer(cfg, dataset)
    size = min(cfg.batch_size, len(dataset.split("train")))
    if size == 0:
        raise DataError("Benchmark needs at least one training sample")
    indices = np.arange(size)
    s5_bytes, peaks, elapsed = [], [], 0.0
    kept = 0
    for step in range(cfg.bench_steps):
        start = time.perf_counter()
        stats = trainer.train_step(indices, Rng(cfg.seed).child(5, step))
        elapsed += time.perf_counter() - start
        s5_bytes.append(stats.s5_bytes)
        peaks.append(stats.peak_bytes)
        kept = stats.kept
    tokens = cfg.tokens
    return {
        "eta": eta,
        "tokens": tokens,
        "kept_tokens": kept,
        "s5_block_bytes": int(np.mean(s5_bytes)),
        "peak_bytes": int(np.mean(peaks)),
        "tokens_per_sec": size * tokens * cfg.bench_steps / max(elapsed, 1e-9),
    }


def run_bench(config: TrainConfig, dataset: Dataset, out_dir: Union[str, Path, None] = None,
              etas: Sequence[float] = BENCH_ETAS) -> pd.DataFrame:
    """One row per masking ratio; ``s5_bytes_ratio`` is relative to the first ratio."""
    rows = [bench_eta(config, dataset, eta) for eta in etas]
    base = rows[0]["s5_block_bytes"] or 1
    for row in rows:
        row["s5_bytes_ratio"] = row["s5_block_bytes"] / base
        logger.info(f"bench eta={row['eta']:g}: K={row['kept_tokens']}/{row['tokens']}, "
                    f"S5 block {row['s5_block_bytes']} bytes, {row['tokens_per_sec']:.0f} tokens/s")
    frame = pd.DataFrame(rows, columns=list(BENCH_COLUMNS))
    if out_dir is not None:
        atomic_write(Path(out_dir) / "bench.csv", frame.to_csv(index=False).encode("utf-8"))
    return frame


def print_bench(frame: pd.DataFrame, console: Optional[Console] = None) -> None:
    console = console or Console()
    table = Table(title="Token selection benchmark")
    table.add_column("eta", style="cyan")
    table.add_column("K / ST", justify="right")
    table.add_column("S5 block bytes", justify="right", style="green")
    table.add_column("ratio", justify="right")
    table.add_column("peak bytes", justify="right")
    table.add_column("tokens/s", justify="right", style="magenta")
    for row in frame.itertuples(index=False):
        table.add_row(f"{row.eta:g}", f"{row.kept_tokens} / {row.tokens}",
                      f"{row.s5_block_bytes:,}", f"{row.s5_bytes_ratio:.2f}",
                      f"{row.peak_bytes:,}", f"{row.tokens_per_sec:,.0f}")
    console.print(table)
