"""Exception types shared across the package."""


class AttnGuideError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AttnGuideError):
    """Invalid configuration value, field or token-group structure."""


class DimensionError(AttnGuideError):
    """Operand shapes do not satisfy an operation's contract."""


class ContractError(AttnGuideError):
    """An API precondition was violated (wrong tape, non-scalar output, ...)."""


class NumericError(AttnGuideError):
    """A computation produced or consumed non-finite values."""


class DegenerateInputError(AttnGuideError):
    """Input is degenerate for the requested operation (e.g. zero vector)."""


class PairingError(AttnGuideError):
    """Contrastive pairs cannot be formed from the given features."""


class MetricError(AttnGuideError):
    """A score is undefined for the given group structure."""
