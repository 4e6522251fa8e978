"""Exception types shared across the planner."""


class PlanningError(Exception):
    """Base class for every error raised by this package."""


class LimitViolation(PlanningError):
    pass


class StrokeExceeded(PlanningError):
    pass


class NoSolution(PlanningError):
    pass


class UnsupportedShape(PlanningError):
    pass


class NoPoses(PlanningError):
    pass


class NoGrasps(PlanningError):
    pass


class NoPairs(PlanningError):
    pass


class EmptyLayer(PlanningError):
    pass


class NoSequence(PlanningError):
    pass


class UnknownEdge(PlanningError):
    pass


class InvalidQuery(PlanningError):
    pass


class NoPath(PlanningError):
    pass


class InputError(PlanningError):
    """Problems with files handed to us by the user (exit code 3)."""


class FormatError(InputError):
    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.field = field


class SchemaError(InputError):
    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class ValidationError(InputError):
    pass


class TimeOutOfRange(PlanningError):
    pass


class TaskFailure(PlanningError):
    """Raised by :func:`plan_task` once every budget is exhausted."""

    def __init__(self, message, diagnosis=None, partial=None):
        super().__init__(message)
        self.diagnosis = diagnosis or {}
        self.partial = partial
