"""Exceptions raised by the engine.

Violations found by ``netmodel.validate`` and no-pickup outcomes recorded by
``coordination.verify`` are returned as data and never raised.
"""

from typing import List, Optional


class DgProtectError(Exception):
    """Base class for every engine error."""


# --- Network model ---

class NetworkParseError(DgProtectError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.column = column
        self.field = field
        location = ""
        if line is not None:
            location = f" (line {line}, column {column})"
        elif field:
            location = f" (at {field})"
        super().__init__(f"{message}{location}")


class DuplicateIdError(DgProtectError):
    pass


class DanglingReferenceError(DgProtectError):
    pass


class ScenarioError(DgProtectError):
    pass


class NetworkValidationError(DgProtectError):
    def __init__(self, violations: List["object"]):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"network is not valid: {lines}")


class ZeroImpedanceError(DgProtectError):
    pass


# --- Short circuit ---

class SingularNetworkError(DgProtectError):
    pass


class BusNotFoundError(DgProtectError):
    pass


# --- Load flow ---

class ConvergenceError(DgProtectError):
    def __init__(self, mismatch: float, iterations: int, solution=None):
        self.mismatch = mismatch
        self.iterations = iterations
        self.solution = solution
        super().__init__(f"power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e} pu)")


class InfeasibleSiteError(DgProtectError):
    pass


# --- Relay ---

class NoPickupError(DgProtectError):
    pass


class TmsRangeError(DgProtectError):
    pass


# --- Coordination ---

class MissingSettingError(DgProtectError):
    pass


class MissingFaultCurrentError(DgProtectError):
    pass


class TopologyError(DgProtectError):
    pass
