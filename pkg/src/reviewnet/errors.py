"""Shared exception types; the CLI maps them onto distinct exit codes."""


class ShapeError(ValueError):
    """Operands or arguments with incompatible shapes."""


class ConfigError(ValueError):
    """Invalid configuration or malformed request."""


class DataError(ValueError):
    """Missing or malformed dataset, vocabulary, or checkpoint file."""


class NumericError(ArithmeticError):
    """Non-finite value where a finite one is required."""


class ContractError(ValueError):
    """Call violates a documented API precondition."""
