from .report import RunReporter, RunSummary, write_reports

__all__ = ["RunReporter", "RunSummary", "write_reports"]
