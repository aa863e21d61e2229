"""Exception hierarchy shared by all modules."""


class VFormationError(Exception):
    pass


class ConfigurationError(VFormationError, ValueError):
    """Invalid parameters or mismatched dimensions."""


class DegenerateGeometryError(VFormationError):
    """Two birds occupy the same position."""


class DomainError(VFormationError, ValueError):
    """A metric was evaluated outside its domain (e.g. a zero-speed bird)."""


class SamplingError(VFormationError):
    """Rejection sampling ran out of attempts."""


class OptimizationError(VFormationError):
    """The objective returned a non-finite value."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class InternalError(VFormationError):
    """A broken invariant inside a planner (a bug, not a user error)."""
