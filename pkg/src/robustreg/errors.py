"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class SingularMatrixError(ArithmeticError):
    """A linear system is singular or numerically unsolvable.

    Carries an optional condition-number estimate of the offending matrix.
    """

    def __init__(self, message, cond=None):
        if cond is not None:
            message = f"{message} (condition estimate {cond:.3e})"
        super().__init__(message)
        self.cond = cond


class UnstableDeltaError(SingularMatrixError):
    """The shifted system X X^T - delta I is too close to singular.

    Raised by the adaptive corruption generator; pick a delta away from the
    eigenvalues of X X^T.
    """


class InvalidHyperparameterError(InvalidArgumentError):
    """Weight-prior hyperparameters give an improper tilted posterior."""


class NumericError(RuntimeError):
    """A numerical routine (quadrature, iteration) failed to converge."""
