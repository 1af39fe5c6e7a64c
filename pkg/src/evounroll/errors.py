"""Exception hierarchy shared by all evounroll modules."""


class EvounrollError(Exception):
    """Base class for everything raised on purpose by this package."""


class DimensionError(EvounrollError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(EvounrollError):
    """A documented precondition was violated by the caller."""


class NumericError(EvounrollError):
    """A non-finite value appeared where the contract forbids it."""


class ConfigError(EvounrollError):
    """An experiment configuration is invalid or incomplete."""


class ParseError(EvounrollError):
    """A config or data file could not be parsed."""
