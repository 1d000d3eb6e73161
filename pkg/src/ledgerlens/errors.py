"""Exception hierarchy shared by every ledgerlens module."""


class LedgerLensError(Exception):
    """Base class for all ledgerlens errors."""

    exit_code = 1


class ConfigError(LedgerLensError, ValueError):
    """Invalid configuration: architectures, generator configs, scoring knobs."""

    exit_code = 2


class DataError(LedgerLensError, ValueError):
    """Rejected input data: malformed rows, shape mismatches, bad labels."""

    exit_code = 3


class SchemaError(DataError):
    """A required CSV column is absent."""


class NumericalError(LedgerLensError, ArithmeticError):
    """Non-finite loss or gradient during training."""

    exit_code = 4
