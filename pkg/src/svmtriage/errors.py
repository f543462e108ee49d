"""Exception hierarchy shared by all modules."""


class TriageError(Exception):
    """Base class for every error raised by svmtriage."""


class ValidationError(TriageError, ValueError):
    """Input violates a documented precondition."""


class ParseError(ValidationError):
    """A CSV or text file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(ValidationError):
    """A file parsed but its columns do not match the expected layout."""


class NumericError(TriageError, ArithmeticError):
    """Non-finite inputs or a numerically broken computation."""


class DegenerateProblemError(TriageError):
    """The SVM on the requested active set is not well posed.

    Raised when an offset model is asked to train on a single class, or when
    the active set is empty.
    """


class NonSeparableError(DegenerateProblemError):
    """Hard-margin training on data that is not linearly separable."""


class EnumerationCapError(TriageError):
    """A brute-force enumeration would exceed the configured subset cap."""

    def __init__(self, required, cap):
        super().__init__(
            f"enumeration needs {required} evaluations, above the cap of {cap}; "
            f"raise the cap to at least {required} or shrink the instance"
        )
        self.required = required
        self.cap = cap
