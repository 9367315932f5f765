"""Exception types shared across the package."""


class SharegameError(Exception):
    """Base class for all package-specific errors."""


class DomainError(SharegameError):
    """An argument lies outside the mathematically valid domain."""


class DataError(SharegameError):
    """Input data violates the panel or covariate schema."""


class ConfigurationError(SharegameError):
    """Inconsistent configuration, e.g. heterogeneity without covariates."""


class NumericError(SharegameError):
    """A numeric computation produced a non-finite intermediate."""


class SingularHessianError(NumericError):
    """The Hessian at the optimum is numerically singular."""

    def __init__(self, message: str, condition_number: float):
        super().__init__(f"{message} (condition number {condition_number:.3e})")
        self.condition_number = condition_number


class NonConvergenceError(SharegameError):
    """An optimizer failed to reach the requested tolerance."""
