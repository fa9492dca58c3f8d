"""Exception types raised across the package."""


class MilearnError(Exception):
    pass


class DimensionError(MilearnError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigError(MilearnError, ValueError):
    pass


class ContractError(MilearnError, RuntimeError):
    """An operation was called outside of its documented preconditions."""


class InputError(MilearnError, ValueError):
    pass


class NumericError(MilearnError, FloatingPointError):
    """A non-finite value was produced."""


class CheckpointError(MilearnError, IOError):
    pass


class PreconditionError(ContractError):
    pass
