"""Exception hierarchy shared by every module."""


class VsamError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateInputError(VsamError, ValueError):
    """An input has no usable entries (empty mask, empty token list, ...)."""


class ContractError(VsamError, ValueError):
    """A precondition on arguments was violated."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class DomainError(VsamError, ValueError):
    """A value lies outside the domain of a function (e.g. log of <= 0)."""


class NumericalError(VsamError, ArithmeticError):
    """A computation produced NaN or Inf."""


class EmptyEmbeddingError(VsamError, ValueError):
    """An embedding file contained no parseable vectors."""


class EmptyDatasetError(VsamError, ValueError):
    """A dataset file yielded no valid rows."""


class ConfigError(VsamError, ValueError):
    """A run configuration or checkpoint is inconsistent."""
