"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class GroundProbeError(Exception):
    exit_code = 3


class DataError(GroundProbeError, ValueError):
    """Bad input data, violated precondition or malformed file."""


class NumericError(GroundProbeError, ArithmeticError):
    exit_code = 4


# ui-model
class NonPositiveScreenDims(DataError):
    pass


class CoordinateOutOfRange(DataError):
    pass


# datagen
class GridCapacityExceeded(DataError):
    pass


class NoUniquelyNamedElement(DataError):
    pass


class NoUniqueAbsoluteReferent(DataError):
    pass


class NoUniqueRelativeReferent(DataError):
    pass


class DanglingScreenReference(DataError):
    pass


class EmptyDataset(DataError):
    pass


# encoder
class EmptyCommand(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class EmptyScreen(DataError):
    pass


class NonFiniteLoss(NumericError):
    pass


class IoFailure(GroundProbeError, OSError):
    pass


# probing
class SingleClassDataset(DataError):
    pass


class SchemaMismatch(DataError):
    pass


class InconsistentDimension(DataError):
    pass


# report
class EmptySplit(DataError):
    pass


class WrongModelKind(DataError):
    pass
