"""
Exception hierarchy shared by the library and the command line.

Every error carries the process exit code the CLI reports for it, the same
way the server surface mapped failures onto HTTP status codes.
"""

from typing import Optional


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DIVERGED = 3
EXIT_FORMAT = 4


class T3DNetError(Exception):
    """Base error. `exit_code` is what `main()` returns for it."""

    exit_code: int = EXIT_USAGE


class DimensionError(T3DNetError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(T3DNetError, ArithmeticError):
    """NaN/Inf produced, or a domain violation (log of a non-positive value)."""


class ContractError(T3DNetError):
    """A documented precondition does not hold."""


class LabelIndexError(T3DNetError, IndexError):
    """Class label outside [0, C)."""


class ConfigError(T3DNetError):
    """Invalid or missing configuration."""


class GeometryError(T3DNetError):
    """Degenerate geometry (zero area, coincident points)."""


class ParseError(T3DNetError):
    """Malformed text input; `line` is 1-based."""

    def __init__(self, message: str, line: Optional[int] = None, source: Optional[str] = None):
        self.message = message
        self.line = line
        self.source = source
        where = ""
        if source:
            where += f"{source}"
        if line is not None:
            where += f"{':' if where else 'line '}{line}"
        super().__init__(f"{where}: {message}" if where else message)


class FormatError(T3DNetError):
    """Malformed binary file; `offset` is the byte offset of the problem."""

    exit_code = EXIT_FORMAT

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})" if offset is not None else message)


class CheckpointMismatchError(FormatError):
    """Checkpoint was written for a different architecture."""


class TrainingDivergedError(T3DNetError):
    """Loss became non-finite during training."""

    exit_code = EXIT_DIVERGED

    def __init__(self, message: str, epoch: Optional[int] = None, batch: Optional[int] = None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"{message} (epoch={epoch}, batch={batch})")


class ReportError(T3DNetError):
    """Inputs to a report cannot be combined."""
