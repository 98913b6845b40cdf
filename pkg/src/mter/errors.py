"""Exception taxonomy shared by all mter modules."""


class MterError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(MterError):
    """Malformed input file. Carries the offending line number when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc = f" [{loc}]"
        super().__init__(f"{message}{loc}")


class ValidationError(MterError):
    """Input values violate a documented domain restriction."""


class StructuralError(MterError):
    """Network/demand structure is inconsistent (dangling nodes, unreachable pairs)."""


class DomainError(MterError, ValueError):
    """Argument outside an operation's mathematical domain."""


class ConvergenceError(MterError):
    """An iterative solver hit its iteration cap. Carries the last residual."""

    def __init__(self, message, residual=None, iterations=None):
        self.residual = residual
        self.iterations = iterations
        extra = []
        if residual is not None:
            extra.append(f"residual={residual:.3e}")
        if iterations is not None:
            extra.append(f"iterations={iterations}")
        if extra:
            message = f"{message} ({', '.join(extra)})"
        super().__init__(message)


class NumericalError(MterError):
    """A linear solve or normalization produced an unusable result."""


class ModelViolationError(MterError):
    """Model assumptions fail on the given data (e.g. hypercongested travel times)."""
