"""Exception types shared across the package."""


class FormatError(ValueError):
    """Malformed file, header, or wire payload."""


class UnsupportedFormatError(FormatError):
    """Well-formed input in a format this package does not handle."""


class TooShortError(ValueError):
    """Input has too few samples or frames for the requested operation."""


class DomainError(ValueError):
    """Argument outside the operation's domain."""


class InfeasibleError(DomainError):
    """Request cannot be satisfied for this input size."""


class RetryableOracleError(RuntimeError):
    """Transient transport failure talking to a remote model."""


class OracleProtocolError(RuntimeError):
    """Remote model response violates the wire contract."""


class PipelineError(RuntimeError):
    """Failure inside a perturbation sweep; carries the iteration index."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
