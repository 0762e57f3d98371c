from typing import Optional


class WorkbenchError(ValueError):
    """Base class for every error the workbench raises on bad input or limits"""


class ContractViolation(WorkbenchError):
    """A precondition of an operation does not hold (e.g. dimension mismatch)"""


class ExpressionSyntaxError(WorkbenchError):
    pass


class ValidationError(WorkbenchError):
    """A JSON document failed validation; `field` names the offending path"""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class ResourceLimitError(WorkbenchError):
    """A configured cap (grid cells, residual evaluations) would be exceeded"""

    def __init__(self, message: str, requested: int, limit: int):
        self.requested = requested
        self.limit = limit
        super().__init__(f"{message} (requested {requested}, limit {limit})")


class ParameterDomainError(WorkbenchError):
    """A scalar parameter falls outside the range an operation accepts"""

    def __init__(self, message: str, bound: str):
        self.bound = bound
        super().__init__(f"{message}; violated bound: {bound}")


class MissingInvariantError(WorkbenchError):
    pass


class NoTrainableParametersError(WorkbenchError):
    pass


class UnsupportedDimensionError(WorkbenchError):
    pass
