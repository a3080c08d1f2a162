"""Grid of fine-tuning runs over one axis at a time, collected into one CSV."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd
from loguru import logger
from rich.console import Console
from rich.table import Table

from config.config import TrainConfig
from ..data import Dataset, atomic_write
from ..errors import ConfigError
from .pretrainer import PRETRAIN_CHECKPOINT, Pretrainer
from .trainer import Trainer

ABLATION_AXES = ("eta", "frames", "tau", "lsmcl", "pretrain_eta", "selection")
ABLATION_COLUMNS = ("axis", "value", "seed", "pretrained", "kept_tokens", "test_loss",
                    "test_accuracy", "test_recall", "best_val_accuracy", "best_epoch",
                    "final_train_loss")


@dataclass
class AblationCell:
    axis: str
    value: str
    seed: int
    changes: Dict[str, Any] = field(default_factory=dict)
    pretrain: bool = False

    @property
    def name(self) -> str:
        return f"{self.axis}_{self.value}_s{self.seed}".replace(":", "-")


def ablation_cells(config: TrainConfig) -> List[AblationCell]:
    """Every (axis value, seed) cell; the other settings stay at the config values."""
    axes = config.grid("axes")
    unknown = [a for a in axes if a not in ABLATION_AXES]
    if unknown:
        raise ConfigError(f"Unknown ablation axes: {', '.join(unknown)}")

    cells = []
    for seed in config.grid("seeds"):
        for axis in axes:
            if axis == "eta":
                for eta in config.grid("etas"):
                    cells.append(AblationCell(axis, f"{eta:g}", seed, {"eta": eta}))
            elif axis == "frames":
                for frames in config.grid("frames"):
                    cells.append(AblationCell(axis, str(frames), seed, {
                        "input_frames": frames,
                        "clip_frames": min(config.clip_frames, frames),
                    }))
            elif axis == "tau":
                for tau_long, tau_short in config.grid("tau_pairs"):
                    cells.append(AblationCell(axis, f"{tau_long}:{tau_short}", seed,
                                              {"tau_long": tau_long, "tau_short": tau_short},
                                              pretrain=True))
            elif axis == "lsmcl":
                cells.append(AblationCell(axis, "scratch", seed))
                cells.append(AblationCell(axis, "lsmcl", seed, pretrain=True))
            elif axis == "pretrain_eta":
                for eta in config.grid("pretrain_etas"):
                    cells.append(AblationCell(axis, f"{eta:g}", seed, {"pretrain_eta": eta},
                                              pretrain=True))
            elif axis == "selection":
                for mode in config.grid("selections"):
                    cells.append(AblationCell(axis, mode, seed, {"selection": mode}))
    return cells


def run_cell(cell: AblationCell, config: TrainConfig, dataset: Dataset,
             out_dir: Union[str, Path]) -> Dict[str, Any]:
    cell_dir = Path(out_dir) / cell.name
    cfg = config.replace(seed=cell.seed, pretrained_checkpoint=None, **cell.changes)
    if cell.pretrain:
        Pretrainer(cfg, dataset, cell_dir).fit()
        cfg = cfg.replace(pretrained_checkpoint=str(cell_dir / PRETRAIN_CHECKPOINT))
    metrics = Trainer(cfg, dataset, cell_dir).fit().frame()

    val = metrics[metrics["split"] == "val"]
    train = metrics[metrics["split"] == "train"]
    test = metrics[metrics["split"] == "test"].iloc[-1]
    best = val.loc[val["accuracy"].idxmax()] if len(val) else None
    return {
        "axis": cell.axis,
        "value": cell.value,
        "seed": cell.seed,
        "pretrained": cell.pretrain,
        "kept_tokens": int(test["kept_tokens"]),
        "test_loss": float(test["loss"]),
        "test_accuracy": float(test["accuracy"]),
        "test_recall": float(test["recall"]),
        "best_val_accuracy": float(best["accuracy"]) if best is not None else 0.0,
        "best_epoch": int(best["epoch"]) if best is not None else 0,
        "final_train_loss": float(train["loss"].iloc[-1]) if len(train) else 0.0,
    }


def print_ablation(frame: pd.DataFrame, console: Optional[Console] = None) -> None:
    console = console or Console()
    table = Table(title="Ablation")
    table.add_column("Axis", style="cyan")
    table.add_column("Value", style="magenta")
    table.add_column("Seed", justify="right")
    table.add_column("K", justify="right")
    table.add_column("Test acc", justify="right", style="green")
    table.add_column("Recall", justify="right")
    table.add_column("Best val (epoch)", justify="right")
    for row in frame.itertuples(index=False):
        table.add_row(row.axis, str(row.value), str(row.seed), str(row.kept_tokens),
                      f"{row.test_accuracy:.3f}", f"{row.test_recall:.3f}",
                      f"{row.best_val_accuracy:.3f} ({row.best_epoch})")
    console.print(table)


def run_ablation(config: TrainConfig, dataset: Dataset,
                 out_dir: Union[str, Path]) -> pd.DataFrame:
    """Run every cell and write ``ablation.csv`` (rewritten after each cell)."""
    out_dir = Path(out_dir)
    cells = ablation_cells(config)
    logger.info(f"Ablation over {len(cells)} cells")
    rows = []
    for i, cell in enumerate(cells, 1):
        logger.info(f"[{i}/{len(cells)}] {cell.axis}={cell.value} seed={cell.seed}")
        rows.append(run_cell(cell, config, dataset, out_dir))
        frame = pd.DataFrame(rows, columns=list(ABLATION_COLUMNS))
        atomic_write(out_dir / "ablation.csv", frame.to_csv(index=False).encode("utf-8"))
    return pd.DataFrame(rows, columns=list(ABLATION_COLUMNS))
