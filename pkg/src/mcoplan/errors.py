"""Exception types shared across the toolkit."""

from __future__ import annotations


class McoplanError(Exception):
    """Base class for all toolkit errors."""


class PhantomError(McoplanError):
    """Invalid phantom specification or degenerate geometry."""


class MetricsError(McoplanError):
    """Invalid objective/constraint specification or unknown structure."""


class InfeasibleError(McoplanError):
    """The constraint set admits no solution within tolerance.

    ``worst_constraint`` names the constraint with the largest residual
    violation; ``violations`` maps constraint ids to their residuals.
    """

    def __init__(self, message: str, worst_constraint: str, violations: dict[str, float]):
        super().__init__(message)
        self.worst_constraint = worst_constraint
        self.violations = violations


class NavigationError(McoplanError):
    """Navigation request cannot be satisfied under the current locks.

    ``blocking_locks`` lists (objective_index, bound, achievable_minimum)
    for every lock that participates in the conflict.
    """

    def __init__(self, message: str, blocking_locks: list[tuple[int, float, float]]):
        super().__init__(message)
        self.blocking_locks = blocking_locks


class CaseStoreError(McoplanError):
    """Case directory is missing, corrupt, or in the wrong status."""
