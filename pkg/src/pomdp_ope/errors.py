"""Exception types raised by the toolkit."""


class PomdpError(Exception):
    """Base class for all errors raised by this package."""


class ModelShapeError(PomdpError, ValueError):
    """A model or policy table has the wrong dimensions."""


class EncodingError(PomdpError, ValueError):
    """A history/future sequence or packed id is out of range."""


class ActionCoverageError(PomdpError, ValueError):
    """The evaluation policy plays an action the behavior policy never plays."""


class BudgetError(PomdpError, RuntimeError):
    """An exact enumeration would exceed the configured size budget."""


class ConditioningError(PomdpError, ArithmeticError):
    """A covariance matrix is singular or too badly conditioned to solve against.

    Attributes
    ----------
    matrix : str
        Name of the offending matrix.
    sigma_min : float
        Its smallest singular value.
    """

    def __init__(self, matrix, step, sigma_min, cond):
        self.matrix = matrix
        self.step = step
        self.sigma_min = sigma_min
        self.cond = cond
        super().__init__(
            f"{matrix} at step {step} is ill-conditioned "
            f"(sigma_min={sigma_min:.3e}, cond={cond:.3e})"
        )


class PositivityError(PomdpError, ValueError):
    """A quantity required to be strictly positive is not."""


class DatasetError(PomdpError, ValueError):
    """A trajectory file is malformed or belongs to a different model."""


class GenerationError(PomdpError, RuntimeError):
    """A fixture generator ran out of rejection-sampling attempts."""
