"""Exception hierarchy.

Each exception carries the CLI exit code it maps to, so the command-line
front end can translate failures without a lookup table.
"""


class WavesimError(Exception):
    exit_code = 1


class ConfigError(WavesimError, ValueError):
    """Invalid configuration or usage."""

    exit_code = 2


class DatasetNotFoundError(ConfigError, FileNotFoundError):
    exit_code = 2


class DatasetError(WavesimError, ValueError):
    """Malformed or inconsistent dataset files."""

    exit_code = 3


class MalformedDatasetError(DatasetError):
    pass


class CorruptRecordError(DatasetError):
    pass


class FormatError(DatasetError):
    pass


class InconsistencyError(DatasetError):
    pass


class ShapeMismatchError(DatasetError):
    pass


class NumericalError(WavesimError, ArithmeticError):
    exit_code = 4


class StageError(WavesimError):
    """Wraps a failure with the pipeline stage where it happened."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 4)
