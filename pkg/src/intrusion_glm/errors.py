"""Exception and warning types shared across the package."""


class IntrusionGLMError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(IntrusionGLMError, ValueError):
    """Column layout does not match what the operation expects."""


class RowParseError(IntrusionGLMError, ValueError):
    """A data row could not be parsed."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class DomainError(IntrusionGLMError, ValueError):
    """A value lies outside the mathematical or categorical domain."""


class SingularMatrixError(IntrusionGLMError, ValueError):
    """Design or information matrix is rank deficient."""

    def __init__(self, message: str, dependent_columns=()):
        self.dependent_columns = tuple(dependent_columns)
        if self.dependent_columns:
            message = f"{message}; dependent columns: {', '.join(self.dependent_columns)}"
        super().__init__(message)


class GenerationError(IntrusionGLMError, ValueError):
    """Synthetic data could not be generated from the given configuration."""


class NestingError(IntrusionGLMError, ValueError):
    """Two fits are not nested in the direction a test requires."""


class ConvergenceWarning(UserWarning):
    """IRLS stopped at the iteration cap before the deviance settled."""


class JackknifeWarning(UserWarning):
    """One or more jackknife folds were flagged."""


class NonNestedWarning(UserWarning):
    """Likelihood-ratio statistic came out negative."""
