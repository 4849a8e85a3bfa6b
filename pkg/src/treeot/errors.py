"""Exception hierarchy shared by all solver modules.

The CLI maps these onto exit codes: validation problems exit 2, budget
refusals exit 3, solver failures exit 4.
"""
from __future__ import annotations


class TreeOTError(Exception):
    """Base class for all library errors."""


class ValidationError(TreeOTError):
    """Malformed or inconsistent input (trees, couplings, configs)."""


class TreeFormatError(ValidationError):
    """Unparseable or structurally invalid tree document."""


class BudgetExceededError(TreeOTError):
    """An enumeration or dense-tensor budget would be exceeded.

    Raised *before* any work is attempted; the operation refuses rather
    than silently subsampling.
    """


class SolverFailureError(TreeOTError):
    """The LP backend returned an unusable solution.

    Carries residual diagnostics in ``details`` when available.
    """

    def __init__(self, message: str, details: dict | None = None):
        super().__init__(message)
        self.details = dict(details or {})


class IncompletePolicyError(ValidationError):
    """A kernel policy lacks a plan for a reachable node tuple."""
