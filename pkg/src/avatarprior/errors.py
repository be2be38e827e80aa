"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates a documented invariant (bad rotation, bad range, ...)."""


class ShapeError(ValidationError):
    """Tensor or vector dimensions do not match the declared contract."""


class DegenerateBasisError(ValidationError):
    """A geometric basis construction collapsed (parallel vectors, zero span)."""


class ConfigurationError(ValueError):
    """A configuration is internally inconsistent or missing a required part."""


class RankDeficiencyError(ValidationError):
    """A matrix expected to have full row rank is numerically rank deficient."""

    def __init__(self, message, tolerance):
        super().__init__(f"{message} (singular-value tolerance {tolerance:.3e})")
        self.tolerance = tolerance


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration, loss_value):
        super().__init__(
            f"non-finite loss {loss_value!r} at iteration {iteration}"
        )
        self.iteration = iteration
