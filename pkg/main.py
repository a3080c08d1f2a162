import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from loguru import logger
from rich.console import Console
from rich.table import Table

from config.config import TrainConfig, load_config, parse_config_text
from src.data import generate_task, load_dataset, save_dataset
from src.errors import DataError, S5Error, UsageError
from src.monitoring import write_reports
from src.tensor import set_debug_numerics
from src.training import (Pretrainer, Trainer, inspect_kernel, inspect_mask, load_checkpoint,
                          print_ablation, print_bench, run_ablation, run_bench)

COMMANDS = ("gen-data", "train", "pretrain", "eval", "bench", "ablate",
            "inspect-kernel", "inspect-mask")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s5", description="Selective S4 video classifier")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--out", help="output directory (default: out_dir from config)")
    parser.add_argument("--data", help="dataset path (default: data_path from config)")
    parser.add_argument("--deterministic-topk", action="store_true",
                        help="rank tokens by probability without Gumbel noise")
    parser.add_argument("--checkpoint", help="checkpoint for eval and inspect commands")
    parser.add_argument("--split", default="test", choices=("train", "val", "test"))
    parser.add_argument("--count", type=int, default=8, help="samples for inspect-mask")
    parser.add_argument("--layer", type=int, default=0, help="decoder block for inspect-kernel")
    parser.add_argument("--length", type=int, default=64, help="kernel length for inspect-kernel")
    parser.add_argument("--resume", action="store_true", help="continue train from latest checkpoint")
    return parser


def setup_logging(config: TrainConfig) -> None:
    logger.remove()
    logger.add(sys.stdout, level=config.log_level)
    logger.add(config.log_file, rotation="10 MB", retention=5, level=config.log_level)


def cli_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Config keys set by flags; applied after the config file and to checkpoint echoes."""
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.deterministic_topk:
        overrides["deterministic_topk"] = True
    return overrides


def _require_checkpoint(args: argparse.Namespace) -> str:
    if not args.checkpoint:
        raise UsageError(f"{args.command} needs --checkpoint")
    return args.checkpoint


def run_command(args: argparse.Namespace, config: TrainConfig) -> None:
    out_dir = Path(args.out or config.out_dir)
    data_path = args.data or config.data_path

    if args.command == "gen-data":
        dataset = generate_task(config.task_spec(), config.seed)
        save_dataset(dataset, data_path)
        return

    if args.command == "inspect-kernel":
        ckpt = load_checkpoint(_require_checkpoint(args), kind="classifier")
        echo = parse_config_text(ckpt.config_text, f"{args.checkpoint} (config echo)")
        inspect_kernel(ckpt.params, echo.blocks, args.layer, args.length, out_dir / "kernel.csv")
        logger.info(f"Kernel rows of block {args.layer} written to {out_dir / 'kernel.csv'}")
        return

    dataset = load_dataset(data_path)

    if args.command == "train":
        trainer = Trainer(config, dataset, out_dir)
        trainer.fit(resume=args.resume)
        write_reports(out_dir / "metrics.csv")
    elif args.command == "pretrain":
        Pretrainer(config, dataset, out_dir).fit()
    elif args.command == "eval":
        trainer = Trainer.from_checkpoint(_require_checkpoint(args), dataset, **cli_overrides(args))
        row = trainer.evaluate(args.split)
        table = Table(title=f"Evaluation on {args.split}")
        for column in ("loss", "accuracy", "recall", "K"):
            table.add_column(column, justify="right")
        table.add_row(f"{row.loss:.4f}", f"{row.accuracy:.3f}", f"{row.recall:.3f}",
                      str(row.kept_tokens))
        Console().print(table)
    elif args.command == "bench":
        print_bench(run_bench(config, dataset, out_dir))
    elif args.command == "ablate":
        print_ablation(run_ablation(config, dataset, out_dir))
    elif args.command == "inspect-mask":
        trainer = Trainer.from_checkpoint(_require_checkpoint(args), dataset, **cli_overrides(args))
        inspect_mask(trainer, args.split, args.count, out_dir / "mask.csv")
        logger.info(f"Mask rows written to {out_dir / 'mask.csv'}")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, **cli_overrides(args))
        setup_logging(config)
        set_debug_numerics(config.debug_numerics)
        logger.info(f"{args.command}: seed {config.seed}, task {config.task_kind}, "
                    f"eta {config.eta}, selection {config.selection}")
        run_command(args, config)
    except S5Error as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"File error: {e}")
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
