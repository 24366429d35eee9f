"""Exception hierarchy for otmorph."""


class OtmorphError(Exception):
    """Base class for all otmorph errors."""


class InvalidGridError(OtmorphError, ValueError):
    pass


class OutOfRangeError(OtmorphError, ValueError):
    pass


class ShapeError(OtmorphError, ValueError):
    pass


class ConfigError(OtmorphError, ValueError):
    pass


class IngestionError(OtmorphError):
    """Raised for unreadable or malformed image files.

    ``position`` is the byte offset (or token index) where parsing failed,
    when known.
    """

    def __init__(self, message, path=None, position=None):
        self.path = path
        self.position = position
        where = []
        if path is not None:
            where.append(str(path))
        if position is not None:
            where.append(f"offset {position}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class HypothesisViolationError(OtmorphError, ValueError):
    pass


class DegenerateInputError(OtmorphError, ValueError):
    pass


class EllipticityError(OtmorphError, ValueError):
    pass


class SolverDivergenceError(OtmorphError, RuntimeError):
    """CG did not reach the requested tolerance.

    Carries the final relative residual and the residual history.
    """

    def __init__(self, message, residual=float("nan"), history=(), iteration=None):
        self.residual = residual
        self.history = list(history)
        self.iteration = iteration
        super().__init__(f"{message}; final relative residual {residual:.3e}")


class DivisionGuardError(OtmorphError, ValueError):
    pass


class ExportError(OtmorphError, OSError):
    pass
