"""Exception hierarchy.

Validation problems (bad input, mismatched artifacts) map to CLI exit code 1;
numerical and runtime failures map to exit code 2.
"""


class TrialRankError(Exception):
    exit_code = 2


class ValidationError(TrialRankError, ValueError):
    exit_code = 1


class ParseError(ValidationError):
    """A record or link file could not be parsed."""

    def __init__(self, message, *, source=None, field=None):
        self.source = source
        self.field = field
        parts = []
        if source is not None:
            parts.append(str(source))
        if field is not None:
            parts.append(f"field {field!r}")
        prefix = ": ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class ArtifactMismatchError(ValidationError):
    """An upstream artifact hash does not match what a stage expected."""


class NumericalError(TrialRankError, ArithmeticError):
    exit_code = 2
