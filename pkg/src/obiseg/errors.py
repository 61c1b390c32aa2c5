"""Exception hierarchy.

Every error raised on bad input derives from :class:`SegregationError`,
which is itself a ``ValueError`` so callers that only care about "bad
input" can catch that.
"""


class SegregationError(ValueError):
    pass


class InvalidGroupSpace(SegregationError):
    pass


class ZeroContacts(SegregationError):
    pass


class DimensionMismatch(SegregationError):
    pass


class MissingOwnGroup(SegregationError):
    pass


class DegenerateGroupSpace(SegregationError):
    """Own-group share of 1: only one effective group."""


class MixedGroups(SegregationError):
    pass


class UnsupportedDimension(SegregationError):
    pass


class UnlabeledEndpoint(SegregationError):
    pass


class EmptyGraph(SegregationError):
    pass


class DegenerateGroups(SegregationError):
    pass


class IsolatedGroup(SegregationError):
    pass


class EmptyGroup(SegregationError):
    pass


class IncompleteTable(SegregationError):
    pass


class EmptyInput(SegregationError):
    pass


class TooManyMalformedRows(SegregationError):
    pass


class AgeOutOfRange(SegregationError):
    pass


class ZeroPercentage(SegregationError):
    pass


class UnknownGroupValue(SegregationError):
    pass


class InvalidAttribute(SegregationError):
    pass
