"""Exception types shared across the package."""


class CamvrError(Exception):
    """Base for every error this package raises deliberately."""


class ShapeError(CamvrError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(CamvrError, ValueError):
    """A configuration value is invalid; message names the offending key."""


class ContractError(CamvrError, ValueError):
    """A caller violated an operation's precondition."""


class QueryParseError(CamvrError, ValueError):
    """A query token sequence does not match the template grammar."""


class TrainingDiverged(CamvrError, RuntimeError):
    """Training loss became non-finite."""
