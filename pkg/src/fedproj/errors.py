"""Exception types shared across the package."""


class FedprojError(Exception):
    """Base class for every error raised by this package."""


class InvalidDimensionError(FedprojError, ValueError):
    """A dimension, budget, or index is outside its valid range."""


class ShapeMismatchError(FedprojError, ValueError):
    """A vector or message does not match the partition it is used with."""


class InfeasibleBudgetError(FedprojError, ValueError):
    """A basis budget cannot be split over the blocks (total < L or > sum d_l)."""


class PartitionError(FedprojError, ValueError):
    """A data partition request cannot be satisfied."""


class ProtocolError(FedprojError, RuntimeError):
    """A wire message is malformed, truncated, or has an unknown version/tag."""


class NumericError(FedprojError, ArithmeticError):
    """A numeric evaluation produced a non-finite value."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class DivergedError(NumericError):
    """Local training diverged; carries the iteration (and optionally round) index."""

    def __init__(self, message: str, iteration: int, round_index: int | None = None,
                 client_id: int | None = None):
        super().__init__(message, index=iteration)
        self.iteration = iteration
        self.round_index = round_index
        self.client_id = client_id


class ConfigError(FedprojError, ValueError):
    """An experiment config file failed to parse or validate.

    ``line``/``column`` are set when the failure has a file position.
    """

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        super().__init__(message)
        self.line = line
        self.column = column
