"""Exception hierarchy shared by every subpackage.

Library code raises these; only ``main.py`` turns them into log lines and
process exit codes (2 for bad input, 3 for files, 4 for numerics, 1 otherwise).
"""


class S5Error(Exception):
    exit_code = 1


class ShapeError(S5Error):
    """Operand extents do not agree with an operation's contract."""


class UsageError(S5Error):
    """A command or API was used incorrectly (missing --checkpoint, backward twice)."""
    exit_code = 2


class ArgumentError(S5Error, ValueError):
    """An argument is outside its valid range."""
    exit_code = 2


class NumericalError(S5Error):
    """A computation produced a non-finite value or hit a singular system."""
    exit_code = 4


class CheckpointError(S5Error):
    """Parameter names or shapes do not match the target model."""
    exit_code = 3


class FormatError(S5Error):
    """A binary file has a bad magic, version or truncated body."""
    exit_code = 3


class DataError(S5Error):
    """Input data cannot serve the requested operation."""
    exit_code = 3


class ConfigError(S5Error):
    """Configuration file or overrides failed validation."""
    exit_code = 2
