"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes, so solver code should raise the
most specific class that applies rather than bare ValueError.
"""


class MongeAmpereError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgument(MongeAmpereError, ValueError):
    """Malformed input: bad shapes, incommensurate lattices, out-of-range options."""


class InfeasibleProblem(MongeAmpereError):
    """Problem data violates a solvability requirement (compatibility, positivity)."""


class NonConvergence(MongeAmpereError):
    """Newton failed to reach tolerance; carries the best iterate seen."""

    def __init__(self, message, best=None, residual_inf=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.residual_inf = residual_inf
        self.iterations = iterations


class InvariantViolation(MongeAmpereError):
    """A certified postcondition failed on computed output (report gate)."""
