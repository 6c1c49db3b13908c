"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class NeutsflowError(Exception):
    pass


class UsageError(NeutsflowError, ValueError):
    """Caller violated an operation's contract (bad shape, axis, config key)."""


class ConfigError(UsageError):
    """Invalid or unknown configuration entry."""


class DataError(NeutsflowError):
    """Dataset cannot be ingested as specified (parse failure, gap, bad split)."""


class NumericalError(NeutsflowError):
    """Non-finite state or divergence detected during training/inference."""
