"""Exception hierarchy shared by every module in the package."""


class CdneMilError(Exception):
    """Base class for all package errors."""


class DimensionError(CdneMilError, ValueError):
    """Operand shapes do not conform to an operation's signature."""


class DomainError(CdneMilError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class NumericError(CdneMilError, ArithmeticError):
    """A computation produced NaN or Inf."""


class ContractError(CdneMilError, RuntimeError):
    """A caller violated an API precondition."""


class ValidationError(CdneMilError, ValueError):
    """A configuration or specification value is invalid."""


class SchemaError(CdneMilError, ValueError):
    """A file on disk does not match its documented layout."""


class DatasetIOError(CdneMilError, OSError):
    """A dataset file is missing or truncated."""

    def __init__(self, bag_id, message):
        super().__init__(f"bag {bag_id!r}: {message}")
        self.bag_id = bag_id


class UndefinedMetricError(CdneMilError, ValueError):
    """A metric is undefined for the given inputs (e.g. one class only)."""
