"""Shared exception types.

ValidationError marks bad inputs or configuration (CLI exit code 1);
anything else that escapes is a runtime failure (exit code 2).
"""


class ValidationError(Exception):
    pass


class TrainingDiverged(RuntimeError):
    """Raised when the optimizer produces non-finite loss; carries history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []
