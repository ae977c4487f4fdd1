"""Exception hierarchy shared by all mucon modules.

The CLI maps these onto exit codes: usage problems exit 1, ``DataError``
exits 2, ``NumericError`` exits 3.
"""

from __future__ import annotations


class MuconError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(MuconError, ValueError):
    """A caller violated a documented precondition (shapes, ranges, counts)."""


class DataError(MuconError):
    """A dataset, checkpoint, or prediction file could not be read or is malformed."""


class NumericError(MuconError):
    """A numeric invariant failed (non-finite values, degenerate quantities)."""


class DegenerateLengthError(NumericError):
    """A normalized segment length collapsed below the usable threshold."""


class InfeasibleError(ContractError):
    """No feasible assignment exists (e.g. more segments than frames)."""


class SplitError(MuconError):
    """A requested dataset split cannot be satisfied."""


class TrainingDivergedError(NumericError):
    """Training produced a non-finite loss; carries the offending step index."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at training step {step}")
