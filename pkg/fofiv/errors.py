# fofiv/errors.py
from typing import Any, Dict, Optional


class FofivError(Exception):
    """Base class for every error raised by the laboratory."""


class ParameterError(FofivError, ValueError):
    pass


class ConfigError(FofivError, ValueError):
    """Bad configuration key or value; the CLI maps it to a usage error."""

    def __init__(self, key: str, message: str):
        self.key = key
        self.message = message
        super().__init__(f"{key}: {message}")


class CapacityError(FofivError):
    pass


class EdgeListParseError(FofivError):
    def __init__(self, path: str, line_no: int, message: str):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class SolveError(FofivError):
    """(I - beta G) is numerically singular."""

    def __init__(self, message: str, pivot: float = 0.0, cell: Optional[Dict[str, Any]] = None):
        self.pivot = pivot
        self.cell = dict(cell or {})
        super().__init__(message)


class DivergenceError(FofivError):
    pass


class NonConvergenceError(FofivError):
    pass


class CollinearityError(FofivError):
    def __init__(self, column: str, message: str = ""):
        self.column = column
        super().__init__(message or f"column '{column}' is linearly dependent on the preceding columns")


class DegenerateInstrumentError(FofivError):
    """The friends-of-friends instrument carries no variation (G2 = 0 or G2 X = 0)."""


class DegenerateVarianceError(FofivError):
    pass


class SingularBoundaryError(FofivError):
    def __init__(self, index: int, eigenvalue: float, beta: float):
        self.index = index
        self.eigenvalue = eigenvalue
        super().__init__(
            f"beta * lambda_{index} = {beta * eigenvalue:.12g} is on the stability boundary"
        )


class SelfLoopWarning(UserWarning):
    pass
