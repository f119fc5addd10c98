"""Exception taxonomy shared across the package."""


class HiercapError(Exception):
    """Base class for all package errors."""


class DimensionError(HiercapError):
    """Shapes of tensor operands are incompatible."""


class ContractError(HiercapError):
    """A documented precondition was violated by the caller."""


class VocabularyError(HiercapError):
    """Token id or token string outside the vocabulary."""


class ConfigError(HiercapError):
    """Invalid configuration value or combination."""


class DataError(HiercapError):
    """Dataset or checkpoint files missing or malformed."""


class NumericError(HiercapError):
    """A NaN or Inf surfaced in a public tensor operation."""
