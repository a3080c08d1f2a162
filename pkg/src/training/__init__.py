from .optimizer import AdamW, adamw_step
from .scheduler import LR_FLOOR, PlateauScheduler, WarmupSchedule, plateau_scheduler
from .checkpoint import (
    Checkpoint,
    CHECKPOINT_KINDS,
    encode_checkpoint,
    decode_checkpoint,
    save_checkpoint,
    load_checkpoint,
)
from .metrics import METRICS_COLUMNS, MetricsLog, MetricsRow, read_metrics
from .trainer import Trainer, build_classifier
from .pretrainer import Pretrainer, build_lsmcl
from .ablation import AblationCell, ablation_cells, run_ablation, print_ablation
from .bench import run_bench, print_bench
from .inspection import inspect_kernel, inspect_mask

__all__ = [
    "AdamW",
    "adamw_step",
    "LR_FLOOR",
    "PlateauScheduler",
    "WarmupSchedule",
    "plateau_scheduler",
    "Checkpoint",
    "CHECKPOINT_KINDS",
    "encode_checkpoint",
    "decode_checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "METRICS_COLUMNS",
    "MetricsLog",
    "MetricsRow",
    "read_metrics",
    "Trainer",
    "build_classifier",
    "Pretrainer",
    "build_lsmcl",
    "AblationCell",
    "ablation_cells",
    "run_ablation",
    "print_ablation",
    "run_bench",
    "print_bench",
    "inspect_kernel",
    "inspect_mask",
]
