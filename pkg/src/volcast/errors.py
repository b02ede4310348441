"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: DataError -> 2, NumericError -> 3.
"""


class VolcastError(Exception):
    """Base class for all toolkit errors."""


class DataError(VolcastError):
    """Missing, malformed, or insufficient input data."""


class NumericError(VolcastError):
    """Numerical failure: divergence, non-convergence, non-finite values."""


class TrainingDiverged(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class NoConvergedFit(NumericError):
    """Order search found no converged candidate."""
