"""Run report built from a metrics CSV"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import pandas as pd
from loguru import logger

from src.data.io import atomic_write
from src.training.metrics import read_metrics


@dataclass
class RunSummary:
    """Headline numbers of one fine-tuning run"""
    epochs: int
    kept_tokens: int
    best_epoch: int
    best_val_accuracy: float
    final_train_loss: float
    final_val_accuracy: float
    test_accuracy: Optional[float]
    test_loss: Optional[float]
    mean_recall: float
    max_peak_bytes: int
    accuracy_by_epoch: Dict[int, float] = field(default_factory=dict)


class RunReporter:
    """Summarizes a metrics table"""

    def __init__(self, metrics: pd.DataFrame):
        """
        Initialize run reporter

        Args:
            metrics: Rows as written by the trainer (epoch, split, loss, ...)
        """
        self.metrics = metrics

    def _split(self, name: str) -> pd.DataFrame:
        return self.metrics[self.metrics["split"] == name]

    def analyze(self) -> RunSummary:
        """
        Analyze the run

        Returns:
            RunSummary with the best validation epoch and final scores
        """
        train, val, test = self._split("train"), self._split("val"), self._split("test")
        if val.empty:
            best_epoch, best_acc = 0, 0.0
        else:
            best = val.loc[val["accuracy"].idxmax()]
            best_epoch, best_acc = int(best["epoch"]), float(best["accuracy"])

        return RunSummary(
            epochs=int(train["epoch"].max()) if not train.empty else 0,
            kept_tokens=int(self.metrics["kept_tokens"].iloc[-1]) if len(self.metrics) else 0,
            best_epoch=best_epoch,
            best_val_accuracy=best_acc,
            final_train_loss=float(train["loss"].iloc[-1]) if not train.empty else 0.0,
            final_val_accuracy=float(val["accuracy"].iloc[-1]) if not val.empty else 0.0,
            test_accuracy=float(test["accuracy"].iloc[-1]) if not test.empty else None,
            test_loss=float(test["loss"].iloc[-1]) if not test.empty else None,
            mean_recall=float(val["recall"].mean()) if not val.empty else 0.0,
            max_peak_bytes=int(train["peak_bytes"].max()) if not train.empty else 0,
            accuracy_by_epoch={int(e): float(a) for e, a in zip(val["epoch"], val["accuracy"])},
        )

    def generate_report(self, summary: RunSummary, format: str = "text") -> str:
        """
        Generate run report

        Args:
            summary: Output of :meth:`analyze`
            format: Output format ("text" or "json")

        Returns:
            Formatted report string
        """
        if format == "json":
            return self._generate_json_report(summary)
        else:
            return self._generate_text_report(summary)

    def _generate_text_report(self, summary: RunSummary) -> str:
        """Generate text format report"""
        report: List[str] = []
        report.append("=" * 60)
        report.append("S5 TRAINING RUN REPORT")
        report.append("=" * 60)
        report.append("")

        report.append("TRAINING SUMMARY:")
        report.append(f"  Epochs: {summary.epochs}")
        report.append(f"  Kept Tokens (K): {summary.kept_tokens}")
        report.append(f"  Final Train Loss: {summary.final_train_loss:.4f}")
        report.append(f"  Peak Tape Bytes: {summary.max_peak_bytes:,}")
        report.append("")

        report.append("VALIDATION:")
        report.append(f"  Best Accuracy: {summary.best_val_accuracy:.3f} (epoch {summary.best_epoch})")
        report.append(f"  Final Accuracy: {summary.final_val_accuracy:.3f}")
        report.append(f"  Mean Planted-Token Recall: {summary.mean_recall:.3f}")
        report.append("")

        if summary.test_accuracy is not None:
            report.append("TEST:")
            report.append(f"  Accuracy: {summary.test_accuracy:.3f}")
            report.append(f"  Loss: {summary.test_loss:.4f}")
            report.append("")

        report.append("=" * 60)

        return "\n".join(report)

    def _generate_json_report(self, summary: RunSummary) -> str:
        """Generate JSON format report"""
        return json.dumps(asdict(summary), indent=2)


def write_reports(metrics_path: Union[str, Path]) -> RunSummary:
    """Write ``report.txt`` and ``report.json`` next to ``metrics_path``."""
    metrics_path = Path(metrics_path)
    reporter = RunReporter(read_metrics(metrics_path))
    summary = reporter.analyze()
    for fmt, name in (("text", "report.txt"), ("json", "report.json")):
        text = reporter.generate_report(summary, fmt)
        atomic_write(metrics_path.with_name(name), (text + "\n").encode("utf-8"))
    logger.info(f"Run report written next to {metrics_path}")
    return summary
