"""Energy-constrained image storage on drifting memristive devices."""

from .errors import DomainError, TrainingError, ValidityError

__version__ = "0.1.0"

__all__ = ["DomainError", "TrainingError", "ValidityError", "__version__"]
