class NpgLabError(Exception):
    """Base class for all errors raised by npglab."""


class ParameterError(NpgLabError, ValueError):
    """Invalid argument: bad dimensions, out-of-range constants, mismatched inputs."""


class DomainError(NpgLabError, ValueError):
    """A bound or norm was requested outside the region where it is defined."""


class DegenerateSupportError(NpgLabError):
    """A greedy action set carries zero probability under the current policy."""


class ConvergenceError(NpgLabError, RuntimeError):
    """An iterative solver exceeded its iteration cap."""


class ParseError(NpgLabError):
    """Malformed MDP, policy, trace or config document."""

    def __init__(self, message, *, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
