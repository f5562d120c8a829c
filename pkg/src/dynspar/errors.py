"""Exception hierarchy shared by all modules."""


class SparsifyError(Exception):
    """Base class for every error raised by this package."""


class InvalidEdgeError(SparsifyError, ValueError):
    pass


class StreamParseError(SparsifyError, ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class StreamError(SparsifyError):
    """Illegal stream semantics (duplicate insert, delete of absent edge)."""


class CapacityError(SparsifyError, MemoryError):
    pass


class SketchMismatchError(SparsifyError, ValueError):
    """Two sketches with different parameters or seeds were combined."""


class SolverError(SparsifyError, ArithmeticError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class DimensionError(SparsifyError, ValueError):
    pass


class RecoveryError(SparsifyError):
    def __init__(self, level: int, cause: Exception):
        super().__init__(f"recovery failed at chain level {level}: {cause}")
        self.level = level
        self.cause = cause


class FormatError(SparsifyError, ValueError):
    """Malformed or version-mismatched serialized artifact."""
