"""
Exception hierarchy for the platoon synchronization toolkit.

Every named diagnostic raised by the graph, model, solver, controller and
simulator layers derives from SynchronizationError so the CLI can catch once
at the command boundary and map the failure to an exit code.
"""

from typing import Optional


class SynchronizationError(Exception):
    """Base class for all toolkit errors"""


# Graph diagnostics

class InvalidGraph(SynchronizationError):
    """Communication graph violates a topology requirement"""


class CycleDetected(InvalidGraph):
    pass


class UnreachableAgent(InvalidGraph):
    pass


class InvalidWeight(InvalidGraph):
    pass


class SelfLoop(InvalidGraph):
    pass


class IndexOutOfRange(InvalidGraph):
    pass


class NoNeighbors(InvalidGraph):
    pass


# Model / solver diagnostics

class ModelError(SynchronizationError):
    """Agent, reference or Lyapunov data is inconsistent"""


class ZeroTau(ModelError):
    pass


class DimensionMismatch(ModelError):
    pass


class NotHurwitz(ModelError):
    pass


class NotPositiveDefinite(ModelError):
    pass


class SolveFailed(ModelError):
    pass


class SingularAm(ModelError):
    pass


class SignConditionViolated(ModelError):
    pass


# Simulation diagnostics

class SimulationError(SynchronizationError):
    """Integration could not be completed"""


class NonFiniteState(SimulationError):
    def __init__(self, time: float, message: str = ""):
        self.time = time
        super().__init__(message or f"non-finite state at t={time:.6g}")


class Diverged(SimulationError):
    def __init__(self, time: float, message: str = ""):
        self.time = time
        super().__init__(message or f"trajectory diverged at t={time:.6g}")


# Scenario file diagnostics

class ScenarioParseError(SynchronizationError):
    """Scenario file could not be turned into a Scenario"""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        self.message = message
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field:
            location.append(f"field '{field}'")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")
