class TruncMilsteinError(Exception):
    """Base class for errors raised by this package."""


class UsageError(TruncMilsteinError, ValueError):
    """Bad arguments: out-of-range indices, unknown names, mismatched grids."""


class NumericDomainError(TruncMilsteinError, ArithmeticError):
    """A coefficient evaluated to a non-finite value."""


class PolicyRejectedError(TruncMilsteinError, ValueError):
    """A truncation policy failed admissibility checks."""

    def __init__(self, report):
        self.report = report
        super().__init__(report.summary())


class BlowUpError(TruncMilsteinError, RuntimeError):
    """A solver that must stay finite produced a non-finite state."""
