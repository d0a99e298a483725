"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Inconsistent sizes or hyperparameters (e.g. K not divisible by m)."""


class ContractError(ValueError):
    """An argument violates an operation's precondition."""


class ProtocolError(RuntimeError):
    """The round-by-round encoding protocol was driven out of order."""


class StateError(RuntimeError):
    """An object was used before it reached the required state."""


class CheckpointVersionError(RuntimeError):
    """A checkpoint file has an unknown header or an incompatible version."""
