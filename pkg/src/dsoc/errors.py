"""Exception types raised across the package."""


class DsocError(Exception):
    """Base class for all package errors."""


class EntryOutOfRange(DsocError, ValueError):
    pass


class DegenerateRow(DsocError, ValueError):
    pass


class IndexOutOfRange(DsocError, IndexError):
    pass


class InvalidDelta(DsocError, ValueError):
    pass


class InvalidConfiguration(DsocError, ValueError):
    pass


class NonOrthogonal(DsocError, ValueError):
    pass


class TooManyUsers(DsocError, ValueError):
    pass


class PhaseViolation(DsocError, RuntimeError):
    """A protocol step was invoked on an agent in the wrong phase or mode."""


class ConfigError(DsocError, ValueError):
    """A scenario or run configuration violates its invariants."""


class UnknownUser(DsocError, KeyError):
    pass
