"""Exception hierarchy shared by all sqv modules."""


class SQVError(Exception):
    """Base class for every error raised by this package."""


# operator algebra
class NotSymmetric(SQVError, ValueError):
    pass


class NotPositiveDefinite(SQVError, ValueError):
    pass


class NegativeTime(SQVError, ValueError):
    pass


class EmptyGap(SQVError, ValueError):
    """A time gap of a linear extension is crossed by no edge."""


class NonPositiveRate(SQVError, ValueError):
    pass


# combinatorial maps
class InvalidMap(SQVError, ValueError):
    pass


class FixedPointAlpha(InvalidMap):
    pass


class OrphanComponent(InvalidMap):
    pass


class UnivalentInternal(InvalidMap):
    pass


class DegreeParityImpossible(SQVError, ValueError):
    pass


class DartCapExceeded(SQVError, ValueError):
    pass


# amplitudes
class ArityMismatch(SQVError, ValueError):
    pass


class ExternalCountMismatch(SQVError, ValueError):
    pass


class NotSpanning(SQVError, ValueError):
    pass


class TooManyVertices(SQVError, ValueError):
    pass


class Unbounded(SQVError, ValueError):
    """The action is not bounded below, so exp(-S) is not integrable."""


# langevin
class Diverged(SQVError, RuntimeError):
    pass


# configuration / parsing
class ConfigError(SQVError, ValueError):
    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field
