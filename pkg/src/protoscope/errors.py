"""Exception types shared across the package.

Every failure mode callers are expected to handle gets its own class so
that tests and the CLI can catch precisely what they mean to catch.
"""


class ContractViolation(ValueError):
    """An argument broke a documented precondition (shape, length, range)."""


class NumericFault(ArithmeticError):
    """A computation produced a non-finite value.

    Carries the name of the operation that produced it so training
    divergence can be attributed to a concrete term.
    """

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        msg = f"non-finite values produced by op '{op}'"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class DomainError(ValueError):
    """Input outside the mathematical domain of a special function."""


class CheckpointIntegrityError(RuntimeError):
    """Checkpoint bytes are truncated or fail their digest."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class CheckpointVersionError(RuntimeError):
    """Checkpoint was written by an incompatible format version."""


class UndefinedMetricError(ValueError):
    """The requested metric does not exist for this input (e.g. a single
    observed class, or perfectly degenerate marginals)."""


class StaleSessionError(RuntimeError):
    """A session refers to a prototype-bank version the server no longer
    holds; the intervention result would be computed against the wrong
    weights."""


class ManifestError(ValueError):
    """A corpus manifest is missing files or internally inconsistent."""


class ConfigError(ValueError):
    """A run configuration contains unknown or ill-typed entries."""


class TrainingDiverged(RuntimeError):
    """Training aborted because a loss term went non-finite."""

    def __init__(self, epoch: int, term: str):
        self.epoch = epoch
        self.term = term
        super().__init__(
            f"training diverged at epoch {epoch}: loss term '{term}' is non-finite"
        )
