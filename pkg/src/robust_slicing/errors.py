"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input data violates a documented invariant."""


class ParseError(ValidationError):
    """A document could not be parsed.

    ``lineno`` carries the 1-based line of the failure when the parser
    reports one.
    """

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class SizeGuardError(ValidationError):
    """Instance too large for exhaustive enumeration."""


class InternalConsistencyError(RuntimeError):
    """An engine produced a state or assignment that fails an audit."""
