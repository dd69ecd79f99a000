"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: OS/file errors -> 1, domain and
configuration errors -> 2, transport errors -> 3, numerical divergence -> 4.
"""


class ViewxError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ViewxError):
    """Invalid configuration value or combination."""


class DomainError(ViewxError):
    """An argument is outside the mathematical domain of an operation."""


class ShapeMismatchError(DomainError):
    """Array shapes are inconsistent with each other or with a contract."""


class ParseError(ViewxError):
    """Malformed text input. Carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedModelError(ParseError):
    """Camera model not handled by the parser."""


class DegenerateViewSetError(DomainError):
    """Training views are coincident along the query direction (zero range)."""


class UndefinedDirectionError(DomainError):
    """A direction vector of zero length was supplied."""


class DenoiserError(ViewxError):
    """A denoiser backend failed; carries the step/resample indices."""

    def __init__(self, message, step=None, resample=None):
        super().__init__(message)
        self.step = step
        self.resample = resample


class NumericalDivergenceError(ViewxError):
    """Non-finite values appeared mid-run; names the offending step."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ProtocolError(ViewxError):
    """Malformed wire data. Carries the byte offset where parsing failed."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"at byte {position}: {message}"
        super().__init__(message)
        self.position = position


class TruncatedStreamError(ProtocolError):
    """The stream ended in the middle of a message."""


class TransportError(ViewxError):
    """Connection-level failure: refused, timed out, or closed early."""


class BackendError(ViewxError):
    """The remote backend reported an error; message passed through verbatim."""
