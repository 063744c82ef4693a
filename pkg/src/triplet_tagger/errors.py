"""Exception hierarchy shared by every module.

Four failure classes, matching the CLI exit-code contract:
usage problems are raised as UsageError by the CLI itself, data problems
(bad files, invalid ids, mismatched configs) as DataError, API misuse as
ContractError, shape disagreements as DimensionError, and any NaN/Inf as
NumericError.
"""


class TaggerError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(TaggerError):
    """Operand shapes are incompatible."""


class ContractError(TaggerError):
    """An operation was called outside its documented contract."""


class DataError(TaggerError):
    """Input data (file, record, config) is invalid."""


class NumericError(TaggerError):
    """A non-finite value (NaN or Inf) appeared where it must not."""
