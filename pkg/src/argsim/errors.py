"""Exception classes shared across the package, grouped by failure class."""


class ArgsimError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ArgsimError):
    """Tensor shapes do not conform to an operation's shape rule."""


class ContractError(ArgsimError):
    """A caller violated an operation's precondition."""


class InputError(ArgsimError):
    """Input values are out of range or otherwise unusable."""


class ValidationError(ArgsimError):
    """A file, plan, or configuration value failed validation."""


class ConfigError(ArgsimError):
    """Run configuration is incomplete or inconsistent."""


class IntegrityError(ArgsimError):
    """Stored artifacts disagree with each other (hash or format mismatch)."""


class NumericError(ArgsimError):
    """A numeric guard tripped (non-finite value, zero norm, degenerate input)."""


class UndefinedCorrelationError(NumericError):
    """Correlation is undefined because an input is constant."""
