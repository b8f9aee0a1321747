class EvReconError(Exception):
    """Base class for library errors."""


class InvalidParameterError(EvReconError, ValueError):
    pass


class DimensionMismatchError(EvReconError, ValueError):
    pass


class DegenerateInputError(EvReconError, ValueError):
    pass


class SolverDivergedError(EvReconError, RuntimeError):
    pass


class ConsistencyError(EvReconError, ValueError):
    pass
