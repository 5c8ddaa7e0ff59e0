"""Exception types shared across the package."""


class FpbError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FpbError):
    """Operand shapes do not conform to an operation's shape rule."""


class DomainError(FpbError):
    """Input value outside an operation's numeric domain (e.g. log of <= 0)."""


class ContractError(FpbError):
    """A caller violated an operation's precondition."""


class ConfigError(FpbError):
    """Invalid configuration value or key."""


class OracleError(FpbError):
    """A verification oracle detected an inconsistency (e.g. nondeterminism)."""


class TrainingError(FpbError):
    """Training aborted: divergence or non-finite gradients."""


class CheckpointError(FpbError):
    """Checkpoint file malformed or incompatible with the loading context."""
