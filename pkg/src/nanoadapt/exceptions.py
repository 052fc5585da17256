"""Exception hierarchy shared by every module.

All contract violations derive from :class:`NanoAdaptError` so the CLI can
map them to exit code 1 in one place.
"""


class NanoAdaptError(Exception):
    """Base class for contract errors raised by this package."""


class DimensionError(NanoAdaptError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigError(NanoAdaptError, ValueError):
    """A hyperparameter combination violates a stated invariant."""


class NumericError(NanoAdaptError, ArithmeticError):
    """NaN or Inf encountered where finite values are required."""


class ContractError(NanoAdaptError, RuntimeError):
    """An operation was called outside its precondition."""


class LengthError(NanoAdaptError, ValueError):
    """A sequence is empty or exceeds its allowed length."""


class DivergenceError(NanoAdaptError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step, loss):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


class UndefinedMetricError(NanoAdaptError, ValueError):
    """A metric is undefined for the given (empty or degenerate) input."""
