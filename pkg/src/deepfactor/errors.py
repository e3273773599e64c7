"""Exception types shared across the package."""


class DeepFactorError(Exception):
    """Base class for all package errors."""


class InvalidSpecError(DeepFactorError, ValueError):
    pass


class DimensionMismatchError(DeepFactorError, ValueError):
    pass


class EmptyInputError(DeepFactorError, ValueError):
    pass


class TrainingDivergedError(DeepFactorError, FloatingPointError):
    """Loss became NaN or infinite during training."""


class ZeroDenominatorError(DeepFactorError, ZeroDivisionError):
    """An LRP denominator is exactly zero and no stabilizer was given."""


class DegenerateColumnError(DeepFactorError, ValueError):
    """A descriptor column is constant across the cross-section."""


class DegenerateAttributionError(DeepFactorError, ValueError):
    """Total absolute relevance is zero, so percentages are undefined."""


class SingularDesignError(DeepFactorError, ValueError):
    pass


class PanelFormatError(DeepFactorError, ValueError):
    """Malformed panel file (parse, schema or duplicate-row problems)."""


class InsufficientHistoryError(DeepFactorError, ValueError):
    def __init__(self, message, first_feasible=None):
        super().__init__(message)
        self.first_feasible = first_feasible


class TooFewStocksError(DeepFactorError, ValueError):
    pass


class ZeroVolatilityError(DeepFactorError, ZeroDivisionError):
    pass
