"""Exception taxonomy and the process exit-code contract.

Exit codes: 0 ok, 2 data error, 3 protocol error, 4 internal.
"""

EXIT_OK = 0
EXIT_DATA = 2
EXIT_PROTOCOL = 3
EXIT_INTERNAL = 4


class SuperpatchError(Exception):
    """Base class for every error raised by this package."""

    exit_code = EXIT_INTERNAL


class DataError(SuperpatchError):
    """Malformed, corrupt, or semantically invalid input data."""

    exit_code = EXIT_DATA


class FormatError(DataError):
    """File does not parse as the expected format (magic, framing, field syntax)."""


class MigrationError(FormatError):
    """File carries a version this build cannot read."""


class CorruptionError(DataError):
    """Header parsed but the payload is inconsistent or damaged."""


class ValidationError(DataError):
    """A value or invariant check failed."""


class ConfigError(DataError):
    """Invalid configuration value."""


class DegenerateDataError(DataError):
    """Input too degenerate for the operation (zero vectors, k above distinct points)."""


class EmptyTrainingError(DataError):
    """No usable training signal (for example an all-zero count matrix)."""


class MissingClassError(DataError):
    """A record references a class id that the hierarchy does not define."""


class UndefinedPredictionError(DataError):
    """Every patch of an image landed in an empty cluster; no prediction exists."""


class StoreIOError(DataError):
    """I/O failure while reading or writing an artifact, with path context."""


class ProtocolError(SuperpatchError):
    """The known/unknown experimental contract would be violated."""

    exit_code = EXIT_PROTOCOL


class SplitContaminationError(ProtocolError):
    """A class id appears in both the known and the unknown split."""
