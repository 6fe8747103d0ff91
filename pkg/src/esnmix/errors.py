"""Exception taxonomy shared across the toolkit.

Exit-code mapping used by the CLI:
    ConfigError    -> 1 (usage / configuration)
    DataError      -> 2 (ingestion / format)
    NumericalError -> 3 (numerical failure)
"""


class EsnmixError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(EsnmixError):
    """Invalid configuration or command-line usage."""

    exit_code = 1


class DataError(EsnmixError):
    """Problem with input data (missing columns, empty files, shape mismatch)."""

    exit_code = 2


class NumericalError(EsnmixError):
    """Numerical failure (non-SPD matrix, diverged training, non-finite values)."""

    exit_code = 3

    def __init__(self, message, last_good=None):
        super().__init__(message)
        # Optional snapshot of the last known-good model state, attached by
        # the training loop when it aborts on a non-finite loss.
        self.last_good = last_good
