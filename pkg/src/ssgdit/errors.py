"""Exception hierarchy shared across the package.

Every error raised on purpose derives from ``SsgError`` so callers (and the
CLI exit-code mapping) can distinguish our failures from genuine bugs.
"""


class SsgError(Exception):
    """Base class for all package errors."""


class ValidationError(SsgError):
    """An input violates a documented precondition or invariant."""


class DegenerateInputError(ValidationError):
    """Input is technically well-formed but numerically degenerate
    (e.g. a vector with near-zero norm handed to a normalizer)."""


class FormatError(SsgError):
    """A byte stream does not conform to the SSGF/SSGM layout
    (bad magic, unsupported version, truncation)."""


class ConfigurationError(SsgError):
    """A run was requested with an inconsistent or incomplete configuration
    (e.g. adapter training without a pretrained backbone checkpoint)."""


class DivergenceError(SsgError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")
