"""Shared exception types; the CLI maps these onto exit codes."""


class ConfigurationError(ValueError):
    """Invalid or inconsistent configuration (unknown variant, bad omega, ...)."""


class InvalidInputError(ValueError):
    """Input data violates an operation's preconditions (shape, range, emptiness)."""


class DataError(RuntimeError):
    """Corpus-level problem: malformed files, label/audio disagreement."""


class UndefinedMetricError(RuntimeError):
    """A metric has no defined value for this input (e.g. all-zero reference)."""


class NumericalAbort(RuntimeError):
    """Training produced a non-finite loss; carries a diagnostic snapshot."""

    def __init__(self, message: str, step: int | None = None, lr: float | None = None,
                 batch_ids: list | None = None):
        super().__init__(message)
        self.step = step
        self.lr = lr
        self.batch_ids = batch_ids or []
