"""Exception hierarchy.

``ValidationError`` covers anything caused by user input (files, specs,
plans); the CLI maps it to exit status 2. ``FitError`` and its subclasses
come from the conditional-model optimizers.
"""


class FairchainError(Exception):
    pass


class ValidationError(FairchainError, ValueError):
    pass


class FitError(FairchainError):
    pass


class RankDeficientError(FitError):
    pass


class ConvergenceError(FitError):
    pass


class SeparationError(FitError):
    pass


class DegeneratePairError(FairchainError, ValueError):
    """An observed value was assigned zero probability by a discrete model."""
