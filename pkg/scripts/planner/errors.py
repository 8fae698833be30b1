"""
Planner exception types.
"""


class PlannerError(Exception):
    """Base class for planner errors."""


class ContractViolation(PlannerError):
    """A caller broke an operation's precondition."""


class CoverageIntegrityError(PlannerError):
    """A certified coverage entry failed to produce a plan; the artifact is not trustworthy."""
