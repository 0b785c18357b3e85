"""Exception types shared across the toolkit."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class ValidityError(ValueError):
    """A request falls outside the range a trained model is valid for."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss or gradient."""
