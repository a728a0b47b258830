"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures
to process exit status without a lookup table.
"""

from __future__ import annotations


class CirplanError(Exception):
    exit_code = 1


class ValidationError(CirplanError):
    exit_code = 2


class ConfigError(ValidationError):
    """Invalid configuration (grids, weights, generator settings)."""


class DataError(ValidationError):
    """Input data violating an invariant (duplicate ids, out-of-gallery results)."""


class ModelError(ValidationError):
    """A model cannot be built from the given inputs."""


class UnknownReferenceError(ValidationError):
    """A plan or step list refers to something that does not exist."""


class StepValidationError(ValidationError):
    def __init__(self, step: str | None, message: str):
        self.step = step
        where = f"step {step!r}: " if step is not None else ""
        super().__init__(where + message)


class BruteForceLimitError(ValidationError):
    """Refusal to enumerate a program above the configured size cap."""


class ClauseBudgetError(ValidationError):
    def __init__(self, count: int, budget: int):
        self.count = count
        self.budget = budget
        super().__init__(f"clause enumeration would produce {count} clauses (budget {budget})")


class SolverBudgetError(CirplanError):
    exit_code = 3


class InternalSolverError(CirplanError):
    """A model that is feasible by construction came back infeasible."""


class ProviderError(CirplanError):
    """Embedding provider failure; callers may retry."""

    retriable = True


class EmptyInputError(ValidationError):
    pass


class StorageError(CirplanError):
    exit_code = 4
