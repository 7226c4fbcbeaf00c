"""Exception types raised by the engine."""


class EngineError(Exception):
    """Base class for every error the engine raises deliberately."""


class DuplicateColumnName(EngineError):
    pass


class ZeroDimension(EngineError):
    pass


class DimensionMismatch(EngineError):
    pass


class DuplicateId(EngineError):
    pass


class UnknownColumn(EngineError):
    pass


class EmptyTable(EngineError):
    pass


class ColumnMismatch(EngineError):
    pass


class MissingHistogram(EngineError):
    pass


class ShapeMismatch(EngineError):
    pass


class FrozenNetwork(EngineError):
    pass


class NotFitted(EngineError):
    pass


class EmptyBatch(EngineError):
    pass


class EmptyInput(EngineError):
    pass


class TooManyPlanes(EngineError):
    pass


class IndexMissing(EngineError):
    pass


class LayoutMismatch(EngineError):
    pass


class EngineNotReady(EngineError):
    pass


class InsufficientData(EngineError):
    pass


class ModelMissing(EngineError):
    pass


class InvalidPlan(EngineError):
    pass


class StratumInfeasible(EngineError):
    """Raised when workload generation cannot fill its selectivity strata.

    Carries the indices of strata that still had open slots when the retry
    budget ran out.
    """

    def __init__(self, message, unfilled=()):
        super().__init__(message)
        self.unfilled = tuple(unfilled)


class MisalignedGroundTruth(EngineError):
    pass


class ParseError(EngineError):
    pass


class PersistenceError(EngineError):
    pass
